use serde::Serialize;

use crate::error::{domain, Result};
use crate::model::ModelParams;

/// Node set `{(s_i, x_j, w_k) : 0 <= i <= n_s, 0 <= j <= n_x, 0 <= k <= i}`.
///
/// The elapsed-time axis shares the time step, so transport along a
/// characteristic maps `(i, j, k)` to `(i + 1, ·, k + 1)` with no
/// interpolation in `w`. Within a slice, nodes are stored `k`-major so every
/// fixed-`w` column is contiguous in `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    pub n_s: usize,
    pub n_x: usize,
    pub horizon: f64,
    /// Upper end of the surplus axis, `ηpT`.
    pub x_max: f64,
    pub ds: f64,
    pub dx: f64,
}

impl Grid {
    pub fn new(params: &ModelParams, n_s: usize, n_x: usize) -> Result<Self> {
        if n_s < 2 || n_x < 2 {
            return domain(format!("grid resolutions must be >= 2, got n_s={n_s}, n_x={n_x}"));
        }
        if n_s > u32::MAX as usize || n_x > u32::MAX as usize {
            return domain("grid resolution too large");
        }
        let x_max = params.barrier_at_start();
        Ok(Grid {
            n_s,
            n_x,
            horizon: params.horizon,
            x_max,
            ds: params.horizon / n_s as f64,
            dx: x_max / n_x as f64,
        })
    }

    pub fn s(&self, i: usize) -> f64 {
        if i == self.n_s {
            self.horizon
        } else {
            i as f64 * self.ds
        }
    }

    pub fn x(&self, j: usize) -> f64 {
        if j == self.n_x {
            self.x_max
        } else {
            j as f64 * self.dx
        }
    }

    /// Elapsed-time coordinate of column `k`; same spacing as `s`.
    pub fn w(&self, k: usize) -> f64 {
        self.s(k)
    }

    pub fn column_len(&self) -> usize {
        self.n_x + 1
    }

    /// Number of nodes in slice `i` (`k` runs over `0..=i`).
    pub fn slice_len(&self, i: usize) -> usize {
        (i + 1) * self.column_len()
    }

    pub fn index(&self, j: usize, k: usize) -> usize {
        k * self.column_len() + j
    }

    pub fn node_count(&self) -> usize {
        (0..=self.n_s).map(|i| self.slice_len(i)).sum()
    }

    /// `x_j >= ηp(T - s_i)`, decided in integer arithmetic so that nodes lying
    /// exactly on the barrier are classified without rounding noise.
    pub fn at_or_above_barrier(&self, i: usize, j: usize) -> bool {
        (j as u128) * (self.n_s as u128) >= ((self.n_s - i) as u128) * (self.n_x as u128)
    }

    pub fn is_terminal(&self, i: usize) -> bool {
        i == self.n_s
    }

    /// Index of the first node at or above the barrier in slice `i`.
    pub fn first_barrier_node(&self, i: usize) -> usize {
        let num = (self.n_s - i) * self.n_x;
        num.div_ceil(self.n_s)
    }
}

/// Linear interpolation on a uniform column `values[0..=n]` over `[0, x_max]`,
/// extended by 0 below the axis (ruin) and 1 beyond it (certain survival).
#[inline]
pub fn interp_column(values: &[f64], dx: f64, x: f64) -> f64 {
    if x < 0.0 {
        return 0.0;
    }
    let n = values.len() - 1;
    let pos = x / dx;
    if pos >= n as f64 {
        return if pos == n as f64 { values[n] } else { 1.0 };
    }
    let lo = pos as usize;
    let frac = pos - lo as f64;
    if frac == 0.0 {
        values[lo]
    } else {
        values[lo] + frac * (values[lo + 1] - values[lo])
    }
}

/// Precomputed form of [`interp_column`] at a fixed abscissa.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Stencil {
    Zero,
    One,
    Linear { lo: u32, frac: f64 },
}

impl Stencil {
    pub(crate) fn new(n: usize, dx: f64, x: f64) -> Self {
        if x < 0.0 {
            return Stencil::Zero;
        }
        let pos = x / dx;
        if pos > n as f64 {
            return Stencil::One;
        }
        if pos == n as f64 {
            return Stencil::Linear { lo: n as u32, frac: 0.0 };
        }
        let lo = pos as usize;
        Stencil::Linear { lo: lo as u32, frac: pos - lo as f64 }
    }

    #[inline]
    pub(crate) fn apply(&self, values: &[f64]) -> f64 {
        match *self {
            Stencil::Zero => 0.0,
            Stencil::One => 1.0,
            Stencil::Linear { lo, frac } => {
                let lo = lo as usize;
                if frac == 0.0 {
                    values[lo]
                } else {
                    values[lo] + frac * (values[lo + 1] - values[lo])
                }
            }
        }
    }
}
