use serde::Serialize;

use crate::error::Result;
use crate::model::{ModelParams, State};

use super::grid::interp_column;
use super::quadrature::jump_value;
use super::solver::{SolverConfig, ValueField};

#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    pub max_abs: f64,
    /// Sampled points snapped to nodes `(i, j, k)` with their residual.
    pub nodes: Vec<((usize, usize, usize), f64)>,
    /// Points dropped by the boundary exclusion rule.
    pub excluded: usize,
}

/// Discretized HJB operator evaluated on a solved field at the nodes nearest
/// to `points`:
///
/// ```text
/// max_q { (V(s+Δs, x + Δs·drift(q), w+Δs) - V(s, x, w)) / Δs
///         + λ(w) (J(V(s, ·, 0), x, q) - V(s, x, w)) }
/// ```
///
/// The transport term is the one-sided difference along the controlled
/// characteristic `(1, drift(q), 1)` in `(s, x, w)`. Terminal nodes, the
/// `x = 0` edge and nodes at or above the barrier are excluded.
pub fn hjb_residual(
    value: &ValueField,
    params: &ModelParams,
    cfg: &SolverConfig,
    points: &[State],
) -> Result<ResidualReport> {
    let g = &value.grid;
    let q_values = cfg.q_values();
    let mut nodes = Vec::new();
    let mut excluded = 0;
    for p in points {
        let i = (p.s / g.ds).round().max(0.0) as usize;
        let j = (p.x / g.dx).round().max(0.0) as usize;
        if i >= g.n_s || j == 0 || j >= g.n_x || g.at_or_above_barrier(i, j) {
            excluded += 1;
            continue;
        }
        let k = ((p.w / g.ds).round().max(0.0) as usize).min(i);
        let rate = params.hazard.hazard(g.w(k))?;
        if !rate.is_finite() {
            excluded += 1;
            continue;
        }
        let v = value.get(i, j, k);
        let ahead = value.column(i + 1, k + 1);
        let zero_col = value.column(i, 0);
        let mut best = f64::NEG_INFINITY;
        for &q in &q_values {
            let transport = (interp_column(ahead, g.dx, g.x(j) + g.ds * params.drift(q)) - v) / g.ds;
            let jump = jump_value(zero_col, g.dx, &params.claims, g.x(j), q, cfg.n_quad)?;
            best = best.max(transport + rate * (jump - v));
        }
        nodes.push(((i, j, k), best));
    }
    let max_abs = nodes.iter().map(|(_, r)| r.abs()).fold(0.0, f64::max);
    Ok(ResidualReport { max_abs, nodes, excluded })
}
