//! Model parameters, the solvency barrier, and retention policies.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::distributions::{ClaimDistribution, HazardModel};
use crate::error::{domain, Result};
use crate::hjb::Grid;

/// Relative tolerance for treating a surplus as sitting on the barrier.
pub const BARRIER_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Premium rate `p`.
    pub premium: f64,
    /// Reinsurer safety loading `η`.
    pub loading: f64,
    /// Horizon `T`.
    pub horizon: f64,
    pub hazard: HazardModel,
    pub claims: ClaimDistribution,
}

impl ModelParams {
    pub fn new(
        premium: f64,
        loading: f64,
        horizon: f64,
        hazard: HazardModel,
        claims: ClaimDistribution,
    ) -> Result<Self> {
        let params = ModelParams { premium, loading, horizon, hazard, claims };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.premium.is_finite() && self.premium > 0.0) {
            return domain(format!("p must be > 0, got {}", self.premium));
        }
        if !(self.loading.is_finite() && self.loading > 0.0) {
            return domain(format!("eta must be > 0, got {}", self.loading));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return domain(format!("horizon must be > 0, got {}", self.horizon));
        }
        self.hazard.validate()?;
        self.claims.validate()
    }

    /// Net surplus drift `p[q(1 + η) - η]` under retention `q`.
    #[inline]
    pub fn drift(&self, q: f64) -> f64 {
        self.premium * (q * (1.0 + self.loading) - self.loading)
    }

    /// `ηpT`, the barrier at time 0 and the top of the solver's surplus axis.
    pub fn barrier_at_start(&self) -> f64 {
        self.loading * self.premium * self.horizon
    }

    /// Surplus level `ηp(T - s)` at and above which survival to `T` is
    /// certain by ceding every claim.
    pub fn barrier(&self, s: f64) -> Result<f64> {
        if !(0.0..=self.horizon).contains(&s) {
            return domain(format!("time {s} outside [0, {}]", self.horizon));
        }
        Ok(self.barrier_unchecked(s))
    }

    #[inline]
    pub(crate) fn barrier_unchecked(&self, s: f64) -> f64 {
        (self.loading * self.premium * (self.horizon - s)).max(0.0)
    }

    /// Whether `x` is at or above the barrier at time `s`, up to a relative
    /// slack of `BARRIER_SLACK`. A surplus on the barrier with zero retention
    /// drifts exactly along it, so rounding must not move it below.
    pub fn on_or_above_barrier(&self, s: f64, x: f64) -> bool {
        let b = self.barrier_unchecked(s);
        x >= b - BARRIER_SLACK * (1.0 + b)
    }

    /// Membership in `D = {0 <= s <= T, 0 <= x <= ηp(T - s), 0 <= w <= s}`.
    pub fn in_domain(&self, state: &State) -> bool {
        let State { s, x, w } = *state;
        (0.0..=self.horizon).contains(&s)
            && x >= 0.0
            && x <= self.barrier_unchecked(s)
            && w >= 0.0
            && w <= s
    }
}

/// Markovized state: time, surplus, and time since the last claim.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub s: f64,
    pub x: f64,
    pub w: f64,
}

impl State {
    pub fn new(s: f64, x: f64, w: f64) -> Self {
        State { s, x, w }
    }
}

/// Feedback retention rule `q = π(s, x, w)`.
#[derive(Debug, Clone)]
pub enum Policy {
    Constant(f64),
    Table(Arc<PolicyTable>),
}

impl Policy {
    pub fn constant(q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&q) {
            return domain(format!("retention must lie in [0, 1], got {q}"));
        }
        Ok(Policy::Constant(q))
    }

    pub fn evaluate(&self, state: &State) -> f64 {
        match self {
            Policy::Constant(q) => q.clamp(0.0, 1.0),
            Policy::Table(table) => table.evaluate(state),
        }
    }

    /// Step used to discretize the flow between claims; `None` when the
    /// retention cannot change along the flow.
    pub fn flow_step(&self) -> Option<f64> {
        match self {
            Policy::Constant(_) => None,
            Policy::Table(table) => Some(table.grid.ds),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Policy::Constant(q) => format!("constant:{q}"),
            Policy::Table(_) => "table".to_string(),
        }
    }
}

pub fn evaluate_policy(policy: &Policy, state: &State) -> f64 {
    policy.evaluate(state)
}

/// Retention values on the solver grid, interpolated multilinearly.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    pub grid: Grid,
    pub params: ModelParams,
    /// `slices[i][grid.index(j, k)]`.
    pub slices: Vec<Vec<f64>>,
}

impl PolicyTable {
    pub fn new(grid: Grid, params: ModelParams, slices: Vec<Vec<f64>>) -> Result<Self> {
        if slices.len() != grid.n_s + 1 {
            return domain(format!(
                "policy table has {} slices, grid expects {}",
                slices.len(),
                grid.n_s + 1
            ));
        }
        for (i, slice) in slices.iter().enumerate() {
            if slice.len() != grid.slice_len(i) {
                return domain(format!("policy slice {i} has wrong length {}", slice.len()));
            }
            if let Some(q) = slice.iter().find(|q| !(0.0..=1.0).contains(*q)) {
                return domain(format!("policy slice {i} holds retention {q} outside [0, 1]"));
            }
        }
        Ok(PolicyTable { grid, params, slices })
    }

    /// Zero on and above the barrier, where nothing needs to be retained.
    /// Elsewhere the state is clamped into the closure of `D` and the table
    /// is interpolated linearly in `s`, `w` and `x`.
    pub fn evaluate(&self, state: &State) -> f64 {
        let g = &self.grid;
        let s = state.s.clamp(0.0, g.horizon);
        let w = state.w.clamp(0.0, s);
        if self.params.on_or_above_barrier(s, state.x) {
            return 0.0;
        }
        let x = state.x.max(0.0);

        let pos = s / g.ds;
        let i = (pos.floor() as usize).min(g.n_s - 1);
        let frac = (pos - i as f64).clamp(0.0, 1.0);
        let lower = self.slice_value(i, x, w);
        let q = if frac > 0.0 {
            lower + frac * (self.slice_value(i + 1, x, w) - lower)
        } else {
            lower
        };
        q.clamp(0.0, 1.0)
    }

    fn slice_value(&self, i: usize, x: f64, w: f64) -> f64 {
        let g = &self.grid;
        let slice = &self.slices[i];
        let kpos = (w / g.ds).min(i as f64);
        let k = (kpos.floor() as usize).min(i);
        let kfrac = kpos - k as f64;
        let column = |k: usize| {
            let start = g.index(0, k);
            clamped_interp(&slice[start..start + g.column_len()], g.dx, x)
        };
        let a = column(k);
        if kfrac > 0.0 && k < i {
            a + kfrac * (column(k + 1) - a)
        } else {
            a
        }
    }

    /// Direct lookup of the stored node value.
    pub fn node(&self, i: usize, j: usize, k: usize) -> f64 {
        self.slices[i][self.grid.index(j, k)]
    }
}

fn clamped_interp(values: &[f64], dx: f64, x: f64) -> f64 {
    let n = values.len() - 1;
    let pos = (x / dx).clamp(0.0, n as f64);
    let lo = (pos.floor() as usize).min(n - 1);
    let frac = pos - lo as f64;
    values[lo] + frac * (values[lo + 1] - values[lo])
}
