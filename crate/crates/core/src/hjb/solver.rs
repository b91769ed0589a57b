//! Backward semi-Lagrangian sweep for the maximal survival probability.
//!
//! One step from slice `i + 1` to slice `i` follows the deterministic
//! characteristic `(ds, dx, dw) = (Δs, p[q(1 + η) - η] Δs, Δs)` and accounts
//! for at most one claim in the step, placed at the midpoint:
//!
//! ```text
//! cand(q) = e^{-ΔΛ_k} V_{i+1}(x_j + Δs·drift(q), w_{k+1})
//!         + (1 - e^{-ΔΛ_k}) J(V_mid, x_j + ½Δs·drift(q), q)
//! V_i(x_j, w_k) = max_q cand(q)
//! ```
//!
//! where `ΔΛ_k = Λ(w_k + Δs) - Λ(w_k)` and `V_mid` averages the `w = 0`
//! columns of slices `i` and `i + 1`. Because `V_mid` involves the column being
//! computed, the `w = 0` column is found by fixed-point iteration; the map is
//! a contraction with factor at most `(1 - e^{-ΔΛ_0}) / 2`.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::{ModelParams, PolicyTable, State};

use super::grid::{Grid, Stencil};
use super::quadrature::JumpOperator;

const FIXED_POINT_TOL: f64 = 1e-15;
const FIXED_POINT_MAX_ITERS: usize = 500;
/// Sweeps allowed past `FIXED_POINT_TOL` while waiting for a bitwise fixed point.
const FIXED_POINT_EXTRA_SWEEPS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub n_s: usize,
    pub n_x: usize,
    /// Number of retention levels on the uniform grid over `[0, 1]`.
    pub n_q: usize,
    /// Number of Simpson sub-intervals for the jump integral (even).
    pub n_quad: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { n_s: 200, n_x: 200, n_q: 21, n_quad: 64 }
    }
}

impl SolverConfig {
    pub fn new(n_s: usize, n_x: usize) -> Self {
        SolverConfig { n_s, n_x, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_s < 2 || self.n_x < 2 {
            return domain(format!(
                "resolutions must be >= 2, got n_s={}, n_x={}",
                self.n_s, self.n_x
            ));
        }
        if self.n_q < 2 || self.n_q > u16::MAX as usize {
            return domain(format!("n_q must lie in [2, 65535], got {}", self.n_q));
        }
        if self.n_quad < 2 || self.n_quad % 2 != 0 {
            return domain(format!("n_quad must be even and >= 2, got {}", self.n_quad));
        }
        Ok(())
    }

    pub fn q_values(&self) -> Vec<f64> {
        let last = (self.n_q - 1) as f64;
        (0..self.n_q).map(|m| m as f64 / last).collect()
    }
}

/// Discrete value function; `slices[i][grid.index(j, k)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub grid: Grid,
    pub slices: Vec<Vec<f64>>,
}

impl ValueField {
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.slices[i][self.grid.index(j, k)]
    }

    pub fn column(&self, i: usize, k: usize) -> &[f64] {
        let start = self.grid.index(0, k);
        &self.slices[i][start..start + self.grid.column_len()]
    }

    /// Field with every node set to `value`.
    pub fn constant(grid: Grid, value: f64) -> Self {
        let slices = (0..=grid.n_s).map(|i| vec![value; grid.slice_len(i)]).collect();
        ValueField { grid, slices }
    }

    /// Multilinear interpolation, extended by 0 for negative surplus and by
    /// 1 at and above the barrier.
    pub fn interpolate(&self, params: &ModelParams, state: &State) -> f64 {
        let g = &self.grid;
        if state.x < 0.0 {
            return 0.0;
        }
        let s = state.s.clamp(0.0, g.horizon);
        if state.x >= params.barrier_unchecked(s) {
            return 1.0;
        }
        let w = state.w.clamp(0.0, s);
        let pos = s / g.ds;
        let i = (pos.floor() as usize).min(g.n_s - 1);
        let frac = (pos - i as f64).clamp(0.0, 1.0);
        let lower = self.slice_value(i, state.x, w);
        if frac > 0.0 {
            lower + frac * (self.slice_value(i + 1, state.x, w) - lower)
        } else {
            lower
        }
    }

    fn slice_value(&self, i: usize, x: f64, w: f64) -> f64 {
        let g = &self.grid;
        let kpos = (w / g.ds).min(i as f64);
        let k = (kpos.floor() as usize).min(i);
        let kfrac = kpos - k as f64;
        let a = super::grid::interp_column(self.column(i, k), g.dx, x);
        if kfrac > 0.0 && k < i {
            a + kfrac * (super::grid::interp_column(self.column(i, k + 1), g.dx, x) - a)
        } else {
            a
        }
    }
}

/// Maximizing retention index per node; the retention is `index / (n_q - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyField {
    pub grid: Grid,
    pub n_q: usize,
    pub slices: Vec<Vec<u16>>,
}

impl PolicyField {
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.retention(self.slices[i][self.grid.index(j, k)])
    }

    pub fn retention(&self, index: u16) -> f64 {
        index as f64 / (self.n_q - 1) as f64
    }

    pub fn to_table(&self, params: &ModelParams) -> Result<PolicyTable> {
        let slices = self
            .slices
            .iter()
            .map(|s| s.iter().map(|&m| self.retention(m)).collect())
            .collect();
        PolicyTable::new(self.grid, *params, slices)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    /// Largest `V_i - V_{i+1}` over shared nodes (should be <= 0).
    pub max_monotonicity_violation: f64,
    pub wall_time_secs: f64,
    pub node_count: usize,
    /// Most fixed-point sweeps used by any `w = 0` column.
    pub max_fixed_point_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub value: ValueField,
    pub policy: PolicyField,
    pub diagnostics: Diagnostics,
}

/// State for resuming a sweep: the computed slices `start..=n_s`.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub start: usize,
    pub values: Vec<Vec<f64>>,
    pub policy: Vec<Vec<u16>>,
}

pub type SliceCallback<'a> = dyn FnMut(usize, &[f64], &[u16]) -> Result<()> + 'a;

#[derive(Default)]
pub struct SolveOptions<'a> {
    pub resume: Option<Checkpoint>,
    /// Invoked with each completed slice, terminal slice first.
    pub on_slice: Option<&'a mut SliceCallback<'a>>,
}

/// Precomputed per-resolution data for [`Stepper::step`].
pub struct Stepper {
    grid: Grid,
    q_values: Vec<f64>,
    /// `(e^{-ΔΛ_k}, 1 - e^{-ΔΛ_k})` for `k in 0..n_s`.
    survive: Vec<(f64, f64)>,
    /// Flow interpolation stencil per `(j, q)`.
    flow: Vec<Stencil>,
    jump: JumpOperator,
}

impl Stepper {
    pub fn new(params: &ModelParams, cfg: &SolverConfig) -> Result<Self> {
        params.validate()?;
        cfg.validate()?;
        let grid = Grid::new(params, cfg.n_s, cfg.n_x)?;
        let q_values = cfg.q_values();
        let survive = (0..grid.n_s)
            .map(|k| {
                let d = params.hazard.hazard_increment(grid.w(k), grid.ds)?;
                Ok(((-d).exp(), -(-d).exp_m1()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut flow = Vec::with_capacity(grid.column_len() * q_values.len());
        let mut mid = Vec::with_capacity(grid.column_len() * q_values.len());
        for j in 0..grid.column_len() {
            for &q in &q_values {
                let v = params.drift(q);
                flow.push(Stencil::new(grid.n_x, grid.dx, grid.x(j) + grid.ds * v));
                mid.push((grid.x(j) + 0.5 * grid.ds * v, q));
            }
        }
        let jump =
            JumpOperator::new(&params.claims, grid.column_len(), grid.dx, &mid, cfg.n_quad)?;
        Ok(Stepper { grid, q_values, survive, flow, jump })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Slice `i` from slice `i + 1`. Returns values, argmax indices and the
    /// number of fixed-point sweeps used for the `w = 0` column.
    pub fn step(&self, i: usize, next: &[f64]) -> Result<(Vec<f64>, Vec<u16>, usize)> {
        let g = &self.grid;
        if i >= g.n_s {
            return domain(format!("slice index {i} has no successor"));
        }
        if next.len() != g.slice_len(i + 1) {
            return domain(format!(
                "slice {} has {} nodes, expected {}",
                i + 1,
                next.len(),
                g.slice_len(i + 1)
            ));
        }
        let len = g.column_len();
        let next_col = |k: usize| &next[k * len..(k + 1) * len];
        let nq = self.q_values.len();

        let mut jump = vec![0.0; len * nq];
        let mut mid = vec![0.0; len];
        let mut col0 = next_col(0).to_vec();
        let mut q0 = vec![0u16; len];
        let set_mid = |mid: &mut [f64], col0: &[f64]| {
            for ((m, a), b) in mid.iter_mut().zip(col0).zip(next_col(0)) {
                *m = 0.5 * (a + b);
            }
        };
        let mut sweeps = 0;
        let mut settled_at = None;
        loop {
            set_mid(&mut mid, &col0);
            self.jump.apply(&mid, &mut jump);
            let (col, q) = self.update_column(i, 0, next_col(1), &jump);
            let change = col.iter().zip(&col0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            col0 = col;
            q0 = q;
            sweeps += 1;
            if change == 0.0 {
                break;
            }
            if change <= FIXED_POINT_TOL {
                let at = *settled_at.get_or_insert(sweeps);
                if sweeps - at >= FIXED_POINT_EXTRA_SWEEPS {
                    // not bitwise stable: rebuild the jump term from the
                    // stored column so every column of the slice shares it
                    set_mid(&mut mid, &col0);
                    self.jump.apply(&mid, &mut jump);
                    break;
                }
            } else if sweeps >= FIXED_POINT_MAX_ITERS {
                return Err(Error::Numerical(format!(
                    "w=0 column of slice {i} did not settle after {sweeps} sweeps (change {change:e})"
                )));
            }
        }

        let rest: Vec<(Vec<f64>, Vec<u16>)> = (1..=i)
            .into_par_iter()
            .map(|k| self.update_column(i, k, next_col(k + 1), &jump))
            .collect();
        let mut values = Vec::with_capacity(g.slice_len(i));
        let mut policy = Vec::with_capacity(g.slice_len(i));
        values.extend_from_slice(&col0);
        policy.extend_from_slice(&q0);
        for (v, q) in rest {
            values.extend_from_slice(&v);
            policy.extend_from_slice(&q);
        }
        Ok((values, policy, sweeps))
    }

    fn update_column(&self, i: usize, k: usize, next: &[f64], jump: &[f64]) -> (Vec<f64>, Vec<u16>) {
        let g = &self.grid;
        let (stay, leave) = self.survive[k];
        let nq = self.q_values.len();
        let barrier_node = g.first_barrier_node(i);
        let mut values = vec![1.0; g.column_len()];
        let mut policy = vec![0u16; g.column_len()];
        for j in 0..barrier_node.min(g.column_len()) {
            let row = j * nq;
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for m in 0..nq {
                let cand = stay * self.flow[row + m].apply(next) + leave * jump[row + m];
                // strict comparison keeps the smallest maximizing retention
                if cand > best {
                    best = cand;
                    arg = m;
                }
            }
            values[j] = best.clamp(0.0, 1.0);
            policy[j] = arg as u16;
        }
        (values, policy)
    }
}

/// One backward step with freshly built precomputations.
pub fn backward_step(
    next: &[f64],
    i: usize,
    params: &ModelParams,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, Vec<u16>)> {
    let (v, q, _) = Stepper::new(params, cfg)?.step(i, next)?;
    Ok((v, q))
}

pub fn solve(params: &ModelParams, cfg: &SolverConfig) -> Result<Solution> {
    solve_with(params, cfg, SolveOptions::default())
}

pub fn solve_with(
    params: &ModelParams,
    cfg: &SolverConfig,
    mut opts: SolveOptions<'_>,
) -> Result<Solution> {
    let started = Instant::now();
    let stepper = Stepper::new(params, cfg)?;
    let grid = *stepper.grid();
    let n_s = grid.n_s;

    let mut values: Vec<Vec<f64>> = vec![Vec::new(); n_s + 1];
    let mut policy: Vec<Vec<u16>> = vec![Vec::new(); n_s + 1];
    let start = match opts.resume.take() {
        Some(cp) => {
            if cp.start > n_s || cp.values.len() != n_s + 1 - cp.start || cp.policy.len() != cp.values.len() {
                return domain("checkpoint does not match the grid");
            }
            for (offset, (v, q)) in cp.values.into_iter().zip(cp.policy).enumerate() {
                let i = cp.start + offset;
                if v.len() != grid.slice_len(i) || q.len() != grid.slice_len(i) {
                    return domain(format!("checkpoint slice {i} has the wrong length"));
                }
                values[i] = v;
                policy[i] = q;
            }
            cp.start
        }
        None => {
            values[n_s] = vec![1.0; grid.slice_len(n_s)];
            policy[n_s] = vec![0; grid.slice_len(n_s)];
            if let Some(cb) = opts.on_slice.as_mut() {
                cb(n_s, &values[n_s], &policy[n_s])?;
            }
            n_s
        }
    };

    let mut max_sweeps = 0;
    let mut max_violation = f64::NEG_INFINITY;
    for i in (0..start).rev() {
        let (v, q, sweeps) = stepper.step(i, &values[i + 1])?;
        max_sweeps = max_sweeps.max(sweeps);
        values[i] = v;
        policy[i] = q;
        if let Some(cb) = opts.on_slice.as_mut() {
            cb(i, &values[i], &policy[i])?;
        }
    }
    for i in 0..n_s {
        for k in 0..=i {
            for j in 0..grid.column_len() {
                let idx = grid.index(j, k);
                max_violation = max_violation.max(values[i][idx] - values[i + 1][idx]);
            }
        }
    }

    let diagnostics = Diagnostics {
        max_monotonicity_violation: max_violation,
        wall_time_secs: started.elapsed().as_secs_f64(),
        node_count: grid.node_count(),
        max_fixed_point_iterations: max_sweeps,
    };
    Ok(Solution {
        value: ValueField { grid, slices: values },
        policy: PolicyField { grid, n_q: cfg.n_q, slices: policy },
        diagnostics,
    })
}
