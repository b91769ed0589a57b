//! Maximal finite-horizon survival probability of an insurer whose claims
//! arrive as a renewal process and who cedes a proportion of each claim to a
//! reinsurer.
//!
//! The state is Markovized by tracking the time `w` elapsed since the last
//! claim. [`hjb`] solves the dynamic programming equation backward in time on
//! the domain below the barrier `ηp(T - s)`, [`simulator`] estimates the
//! survival probability of any feedback policy by Monte Carlo, and
//! [`validation`] checks the solved field against structural properties of
//! the value function and against simulation.

pub mod distributions;
pub mod error;
pub mod hjb;
pub mod io;
pub mod model;
pub mod simulator;
pub mod validation;

pub use distributions::{ClaimDistribution, HazardModel};
pub use error::{Error, Result};
pub use hjb::{solve, Grid, PolicyField, Solution, SolverConfig, ValueField};
pub use model::{evaluate_policy, ModelParams, Policy, PolicyTable, State};
pub use simulator::{estimate_survival, simulate_path, EstimateCI, PathRecord};

/// Version string embedded in every output header.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
