//! Structural checks on a solved value field and cross-checks against
//! simulation. Each check yields a [`CheckReport`] that fails exactly when
//! its worst violation exceeds its tolerance.

use std::sync::Arc;

use serde::Serialize;

use crate::distributions::HazardModel;
use crate::error::{domain, Result};
use crate::hjb::{Grid, Solution, ValueField};
use crate::model::{ModelParams, Policy, PolicyTable, State};
use crate::simulator::{estimate_survival, simulate_until, sum_paths, EstimateCI, PathStream};

pub const BOUNDARY_TOL: f64 = 0.0;
pub const MONOTONE_TOL: f64 = 1e-10;
pub const W_INEQUALITY_TOL: f64 = 1e-10;
pub const MEMORYLESS_TOL: f64 = 1e-2;
/// Allowance for discretization error when comparing against simulation.
pub const EPS_GRID: f64 = 2e-2;
pub const SIGMAS: f64 = 3.0;
/// Largest admissible ratio of nearest-neighbor differences after doubling
/// the resolution.
pub const REFINEMENT_FACTOR: f64 = 0.7;
pub const MIN_HAZARD: f64 = 1e-10;
/// Retentions whose payoff must not beat the solved value.
pub const SUBOPTIMAL_RETENTIONS: [f64; 3] = [0.0, 0.5, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub status: Status,
    pub violation: f64,
    pub tolerance: f64,
    pub location: Option<String>,
    pub notes: Vec<String>,
}

impl CheckReport {
    fn judged(name: &str, violation: f64, tolerance: f64, location: Option<String>) -> Self {
        let status = if violation > tolerance || violation.is_nan() {
            Status::Fail
        } else {
            Status::Pass
        };
        CheckReport {
            name: name.to_string(),
            status,
            violation,
            tolerance,
            location,
            notes: Vec::new(),
        }
    }

    fn skipped(name: &str, tolerance: f64, reason: &str) -> Self {
        CheckReport {
            name: name.to_string(),
            status: Status::Skipped,
            violation: 0.0,
            tolerance,
            location: None,
            notes: vec![reason.to_string()],
        }
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }
}

/// Tracks the largest violation and where it happened.
struct Worst {
    value: f64,
    at: Option<String>,
}

impl Worst {
    fn new() -> Self {
        Worst { value: 0.0, at: None }
    }

    fn offer(&mut self, value: f64, at: impl FnOnce() -> String) {
        if value > self.value || (value.is_nan() && !self.value.is_nan()) {
            self.value = value;
            self.at = Some(at());
        }
    }
}

fn node(i: usize, j: usize, k: usize) -> String {
    format!("node(i={i}, j={j}, k={k})")
}

fn delta_cumulative_hazard(hazard: &HazardModel, grid: &Grid, k: usize) -> Result<f64> {
    Ok(hazard.cumulative_hazard(grid.w(k + 1))? - hazard.cumulative_hazard(grid.w(k))?)
}

/// `0 <= V <= 1`, `V = 1` on the terminal slice and at and above the barrier.
pub fn check_bounds_and_boundaries(value: &ValueField, _params: &ModelParams) -> CheckReport {
    let g = &value.grid;
    let mut worst = Worst::new();
    for i in 0..=g.n_s {
        for k in 0..=i {
            for j in 0..g.column_len() {
                let v = value.get(i, j, k);
                let mut dev = (-v).max(v - 1.0);
                if g.is_terminal(i) || g.at_or_above_barrier(i, j) {
                    dev = dev.max((1.0 - v).abs());
                }
                worst.offer(dev, || node(i, j, k));
            }
        }
    }
    CheckReport::judged("bounds_and_boundaries", worst.value, BOUNDARY_TOL, worst.at)
}

/// Nondecreasing in `s` at fixed `(x, w)` and nondecreasing in `x` per slice.
pub fn check_monotonicity(value: &ValueField, _params: &ModelParams) -> CheckReport {
    let g = &value.grid;
    let mut worst = Worst::new();
    for i in 0..=g.n_s {
        for k in 0..=i {
            let col = value.column(i, k);
            for j in 0..g.n_x {
                worst.offer(col[j] - col[j + 1], || format!("x-step at {}", node(i, j, k)));
            }
            if i < g.n_s {
                let later = value.column(i + 1, k);
                for j in 0..=g.n_x {
                    worst.offer(col[j] - later[j], || format!("s-step at {}", node(i, j, k)));
                }
            }
        }
    }
    CheckReport::judged("monotonicity", worst.value, MONOTONE_TOL, worst.at)
}

/// `V(s, x, w) >= exp(-(Λ(w + Δs) - Λ(w))) V(s + Δs, x, w + Δs)`.
pub fn check_w_inequality(value: &ValueField, params: &ModelParams) -> Result<CheckReport> {
    let g = &value.grid;
    let mut worst = Worst::new();
    for i in 0..g.n_s {
        for k in 0..=i {
            let factor = (-delta_cumulative_hazard(&params.hazard, g, k)?).exp();
            let col = value.column(i, k);
            let later = value.column(i + 1, k + 1);
            for j in 0..=g.n_x {
                worst.offer(factor * later[j] - col[j], || node(i, j, k));
            }
        }
    }
    Ok(CheckReport::judged("w_inequality", worst.value, W_INEQUALITY_TOL, worst.at))
}

/// Largest spread of `V` across the `w` axis at fixed `(s, x)`.
pub fn w_spread(value: &ValueField) -> (f64, Option<(usize, usize)>) {
    let g = &value.grid;
    let mut best = (0.0, None);
    for i in 1..=g.n_s {
        for j in 0..=g.n_x {
            let (lo, hi) = (0..=i)
                .map(|k| value.get(i, j, k))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if hi - lo > best.0 {
                best = (hi - lo, Some((i, j)));
            }
        }
    }
    best
}

/// Under a constant hazard the value must not depend on `w`.
pub fn check_memoryless(value: &ValueField, params: &ModelParams) -> CheckReport {
    if !matches!(params.hazard, HazardModel::ConstantRate { .. }) {
        return CheckReport::skipped("memoryless", MEMORYLESS_TOL, "hazard is not constant");
    }
    let (spread, at) = w_spread(value);
    CheckReport::judged(
        "memoryless",
        spread,
        MEMORYLESS_TOL,
        at.map(|(i, j)| format!("slice i={i}, x index j={j}")),
    )
}

/// Flags hazards that vanish somewhere on the elapsed-time grid.
pub fn check_hazard_positivity(params: &ModelParams, grid: &Grid) -> Result<CheckReport> {
    let mut min = f64::INFINITY;
    let mut at = 0;
    for k in 0..=grid.n_s {
        let rate = params.hazard.hazard(grid.w(k))?;
        if rate < min {
            min = rate;
            at = k;
        }
    }
    let mut report = CheckReport::judged(
        "hazard_positivity",
        MIN_HAZARD - min,
        0.0,
        Some(format!("w={}", grid.w(at))),
    );
    report.notes.push(format!("min hazard on grid {min:e}"));
    Ok(report)
}

/// Simulation under the extracted policy must reproduce `V`, and constant
/// retentions must not beat it, within `SIGMAS` standard errors plus
/// `eps_grid`.
pub fn crosscheck_mc(
    value: &ValueField,
    table: &Arc<PolicyTable>,
    params: &ModelParams,
    points: &[State],
    n_paths: u64,
    seed: u64,
    eps_grid: f64,
) -> Result<CheckReport> {
    let mut worst = Worst { value: f64::NEG_INFINITY, at: None };
    let mut notes = Vec::new();
    let table_policy = Policy::Table(Arc::clone(table));
    for p in points {
        let v = value.interpolate(params, p);
        let est = estimate_survival(params, &table_policy, p, n_paths, seed)?;
        let dev = (v - est.mean).abs() - SIGMAS * est.std_error;
        notes.push(format_row(p, "table", v, &est));
        worst.offer(dev, || format!("table policy at {}", state_label(p)));
        for q in SUBOPTIMAL_RETENTIONS {
            let est = estimate_survival(params, &Policy::Constant(q), p, n_paths, seed)?;
            let dev = est.mean - v - SIGMAS * est.std_error;
            notes.push(format_row(p, &format!("constant:{q}"), v, &est));
            worst.offer(dev, || format!("constant {q} at {}", state_label(p)));
        }
    }
    let mut report = CheckReport::judged("crosscheck_mc", worst.value, eps_grid, worst.at);
    report.notes = notes;
    Ok(report)
}

fn state_label(p: &State) -> String {
    format!("(s={}, x={}, w={})", p.s, p.x, p.w)
}

fn format_row(p: &State, policy: &str, v: f64, est: &EstimateCI) -> String {
    format!(
        "{} {policy}: V={v} mc={} se={} n={}",
        state_label(p),
        est.mean,
        est.std_error,
        est.n_paths
    )
}

/// Result of the dynamic programming identity test.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DppEstimate {
    pub value: f64,
    pub mean: f64,
    pub std_error: f64,
}

/// Monte Carlo estimate of `E[V(τ ∧ τ^π, X, W)]` for `τ = s + h` under the
/// extracted policy, with `V = 0` after ruin.
pub fn dpp_estimate(
    value: &ValueField,
    table: &Arc<PolicyTable>,
    params: &ModelParams,
    point: &State,
    h: f64,
    n_paths: u64,
    seed: u64,
) -> Result<DppEstimate> {
    if !(h >= 0.0 && point.s + h <= params.horizon + 1e-12) {
        return domain(format!("dpp step {h} leaves [s, T]"));
    }
    let v = value.interpolate(params, point);
    if h == 0.0 {
        return Ok(DppEstimate { value: v, mean: v, std_error: 0.0 });
    }
    let stop = (point.s + h).min(params.horizon);
    let policy = Policy::Table(Arc::clone(table));
    let (sum, sum_sq) = sum_paths(n_paths, |index| {
        let mut stream = PathStream::new(seed, index);
        let rec = simulate_until(params, &policy, point, stop, &mut stream)?;
        Ok(if rec.ruined { 0.0 } else { value.interpolate(params, &rec.final_state) })
    })?;
    let n = n_paths as f64;
    let mean = sum / n;
    let var = if n_paths > 1 { ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
    Ok(DppEstimate { value: v, mean, std_error: (var / n).sqrt() })
}

pub fn check_dpp(
    value: &ValueField,
    table: &Arc<PolicyTable>,
    params: &ModelParams,
    point: &State,
    h: f64,
    n_paths: u64,
    seed: u64,
    eps_grid: f64,
) -> Result<CheckReport> {
    let est = dpp_estimate(value, table, params, point, h, n_paths, seed)?;
    let dev = (est.value - est.mean).abs() - SIGMAS * est.std_error;
    let mut report = CheckReport::judged(
        &format!("dpp_h={h}"),
        dev,
        eps_grid,
        Some(state_label(point)),
    );
    report.notes.push(format!("V={} E[V(stopped)]={} se={}", est.value, est.mean, est.std_error));
    Ok(report)
}

/// Max nearest-neighbor difference of `V` along the `s`, `x` and `w` axes.
pub fn neighbor_differences(value: &ValueField) -> [f64; 3] {
    let g = &value.grid;
    let mut out = [0.0f64; 3];
    for i in 0..=g.n_s {
        for k in 0..=i {
            let col = value.column(i, k);
            for j in 0..=g.n_x {
                if j < g.n_x {
                    out[1] = out[1].max((col[j + 1] - col[j]).abs());
                }
                if i < g.n_s {
                    out[0] = out[0].max((value.get(i + 1, j, k) - col[j]).abs());
                }
                if k < i {
                    out[2] = out[2].max((value.get(i, j, k + 1) - col[j]).abs());
                }
            }
        }
    }
    out
}

/// Discrete continuity probe: neighbor differences must shrink by at least
/// `REFINEMENT_FACTOR` when the resolution doubles. An axis whose coarse
/// difference is already zero must stay zero.
pub fn check_continuity_refinement(coarse: &ValueField, fine: &ValueField) -> Result<CheckReport> {
    if fine.grid.n_s != 2 * coarse.grid.n_s || fine.grid.n_x != 2 * coarse.grid.n_x {
        return domain("continuity probe needs a fine grid of exactly twice the resolution");
    }
    let c = neighbor_differences(coarse);
    let f = neighbor_differences(fine);
    let mut worst = Worst { value: f64::NEG_INFINITY, at: None };
    let mut notes = Vec::new();
    for (axis, name) in ["s", "x", "w"].iter().enumerate() {
        let ratio = if c[axis] == 0.0 {
            if f[axis] == 0.0 { 0.0 } else { f64::INFINITY }
        } else {
            f[axis] / c[axis]
        };
        notes.push(format!("{name}: coarse {} fine {} ratio {ratio}", c[axis], f[axis]));
        worst.offer(ratio, || format!("{name} axis"));
    }
    let mut report = CheckReport::judged("continuity_refinement", worst.value, REFINEMENT_FACTOR, worst.at);
    report.notes = notes;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub eps_grid: f64,
    pub checks: Vec<CheckReport>,
}

impl ValidationReport {
    pub fn new(eps_grid: f64, mut checks: Vec<CheckReport>) -> Self {
        checks.sort_by(|a, b| a.name.cmp(&b.name));
        ValidationReport { eps_grid, checks }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckReport::passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckReport> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub points: Vec<State>,
    pub n_paths: u64,
    pub seed: u64,
    pub dpp_point: State,
    pub dpp_steps: Vec<f64>,
    pub eps_grid: f64,
}

/// Every check on a solved field; the continuity probe runs when a solution
/// at twice the resolution is supplied.
pub fn run_suite(
    params: &ModelParams,
    solution: &Solution,
    refined: Option<&Solution>,
    opts: &SuiteOptions,
) -> Result<ValidationReport> {
    let value = &solution.value;
    let table = Arc::new(solution.policy.to_table(params)?);
    let mut checks = vec![
        check_bounds_and_boundaries(value, params),
        check_monotonicity(value, params),
        check_w_inequality(value, params)?,
        check_memoryless(value, params),
        check_hazard_positivity(params, &value.grid)?,
        crosscheck_mc(value, &table, params, &opts.points, opts.n_paths, opts.seed, opts.eps_grid)?,
    ];
    for &h in &opts.dpp_steps {
        checks.push(check_dpp(value, &table, params, &opts.dpp_point, h, opts.n_paths, opts.seed, opts.eps_grid)?);
    }
    if let Some(fine) = refined {
        checks.push(check_continuity_refinement(value, &fine.value)?);
    }
    Ok(ValidationReport::new(opts.eps_grid, checks))
}
