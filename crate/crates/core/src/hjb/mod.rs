//! Semi-Lagrangian solver for the HJB equation on the Markovized state.

mod grid;
mod quadrature;
mod residual;
mod solver;

pub use grid::{interp_column, Grid};
pub use quadrature::{jump_nodes, jump_value};
pub use residual::{hjb_residual, ResidualReport};
pub use solver::{
    backward_step, solve, solve_with, Checkpoint, Diagnostics, PolicyField, SliceCallback,
    SolveOptions, Solution, SolverConfig, Stepper, ValueField,
};
