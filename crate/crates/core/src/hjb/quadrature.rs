//! Expected post-claim value `∫₀^{x/q} V(s, x - q y, 0) dG(y)`.
//!
//! The integral is taken in probability space: with `u = G(y)` it becomes
//! `∫₀^{G(x/q)} V(s, x - q G⁻¹(u), 0) du`, integrated by composite Simpson on
//! a uniform `u` mesh. Claims larger than `x / q` ruin the insurer and
//! contribute nothing.

use crate::distributions::ClaimDistribution;
use crate::error::{domain, Result};

use super::grid::{interp_column, Stencil};

/// Abscissae (surplus after the claim) and weights of the Simpson rule.
pub fn jump_nodes(
    claims: &ClaimDistribution,
    x: f64,
    q: f64,
    n_quad: usize,
) -> Result<Vec<(f64, f64)>> {
    if n_quad < 2 || n_quad % 2 != 0 {
        return domain(format!("n_quad must be even and >= 2, got {n_quad}"));
    }
    if !(0.0..=1.0).contains(&q) {
        return domain(format!("retention must lie in [0, 1], got {q}"));
    }
    if x.is_nan() || x < 0.0 {
        return Ok(Vec::new());
    }
    if q == 0.0 {
        // Nothing is retained: the claim leaves the surplus at x.
        return Ok(vec![(x, 1.0)]);
    }
    let y_max = x / q;
    let mass = claims.cdf_unchecked(y_max);
    if mass == 0.0 {
        return Ok(Vec::new());
    }
    let h = mass / n_quad as f64;
    let mut nodes = Vec::with_capacity(n_quad + 1);
    for m in 0..=n_quad {
        let coef = if m == 0 || m == n_quad {
            1.0
        } else if m % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let arg = if m == 0 {
            x
        } else if m == n_quad {
            0.0
        } else {
            let y = claims.quantile(m as f64 * h)?;
            (x - q * y).max(0.0)
        };
        nodes.push((arg, coef * h / 3.0));
    }
    Ok(nodes)
}

/// Integral factor of the jump term for a `w = 0` column sampled on a
/// uniform surplus mesh with spacing `dx`.
pub fn jump_value(
    column: &[f64],
    dx: f64,
    claims: &ClaimDistribution,
    x: f64,
    q: f64,
    n_quad: usize,
) -> Result<f64> {
    Ok(jump_nodes(claims, x, q, n_quad)?
        .iter()
        .map(|&(arg, weight)| weight * interp_column(column, dx, arg))
        .sum())
}

/// The jump integral as a fixed linear map from a `w = 0` column to one value
/// per `(surplus node, retention)` pair, with the interpolation stencils
/// merged per column entry.
#[derive(Debug, Clone)]
pub(crate) struct JumpOperator {
    row_start: Vec<usize>,
    cols: Vec<u32>,
    weights: Vec<f64>,
    constant: Vec<f64>,
}

impl JumpOperator {
    /// Row `r` integrates from surplus `points[r].0` with retention `points[r].1`.
    pub(crate) fn new(
        claims: &ClaimDistribution,
        column_len: usize,
        dx: f64,
        points: &[(f64, f64)],
        n_quad: usize,
    ) -> Result<Self> {
        let n = column_len - 1;
        let mut row_start = Vec::with_capacity(points.len() + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        let mut constant = Vec::with_capacity(points.len());
        let mut dense = vec![0.0; column_len];
        let mut touched: Vec<usize> = Vec::new();
        row_start.push(0);
        for &(x, q) in points {
            let mut c = 0.0;
            for (arg, weight) in jump_nodes(claims, x, q, n_quad)? {
                match Stencil::new(n, dx, arg) {
                    Stencil::Zero => {}
                    Stencil::One => c += weight,
                    Stencil::Linear { lo, frac } => {
                        let lo = lo as usize;
                        touched.push(lo);
                        dense[lo] += weight * (1.0 - frac);
                        if frac > 0.0 {
                            touched.push(lo + 1);
                            dense[lo + 1] += weight * frac;
                        }
                    }
                }
            }
            touched.sort_unstable();
            touched.dedup();
            for &col in &touched {
                cols.push(col as u32);
                weights.push(dense[col]);
                dense[col] = 0.0;
            }
            touched.clear();
            constant.push(c);
            row_start.push(cols.len());
        }
        Ok(JumpOperator { row_start, cols, weights, constant })
    }

    pub(crate) fn apply(&self, column: &[f64], out: &mut [f64]) {
        for (r, out) in out.iter_mut().enumerate() {
            let span = self.row_start[r]..self.row_start[r + 1];
            *out = self.constant[r]
                + self.cols[span.clone()]
                    .iter()
                    .zip(&self.weights[span])
                    .map(|(&c, &w)| w * column[c as usize])
                    .sum::<f64>();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXP1: ClaimDistribution = ClaimDistribution::Exponential { mean: 1.0 };

    fn linear_column(n: usize, dx: f64, a: f64, b: f64) -> Vec<f64> {
        (0..=n).map(|j| a + b * j as f64 * dx).collect()
    }

    #[test]
    fn zero_retention_returns_the_column_value() {
        let col = linear_column(10, 0.1, 0.2, 0.5);
        let v = jump_value(&col, 0.1, &EXP1, 0.35, 0.0, 64).unwrap();
        assert!((v - interp_column(&col, 0.1, 0.35)).abs() < 1e-15);
    }

    #[test]
    fn unit_integrand_gives_claim_mass() {
        let col = vec![1.0; 101];
        for (x, q) in [(0.5, 1.0), (2.0, 0.3), (9.0, 0.5)] {
            let v = jump_value(&col, 0.1, &EXP1, x, q, 64).unwrap();
            let mass = EXP1.cdf(x / q).unwrap();
            assert!((v - mass).abs() < 1e-14, "x={x} q={q}: {v} vs {mass}");
        }
        // x / q large: almost all claim mass is survivable
        let v = jump_value(&col, 0.1, &EXP1, 9.0, 0.25, 64).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn negative_surplus_contributes_nothing() {
        let col = vec![1.0; 11];
        assert_eq!(jump_value(&col, 0.1, &EXP1, -0.01, 0.5, 64).unwrap(), 0.0);
    }

    #[test]
    fn odd_quadrature_is_rejected() {
        assert!(jump_nodes(&EXP1, 1.0, 0.5, 63).is_err());
    }

    /// V(x) = a + b x, Exponential(μ), q = 1:
    /// ∫₀ˣ (a + b(x - y)) e^{-y/μ}/μ dy
    ///   = (a + b x)(1 - e^{-x/μ}) - b[μ - (x + μ) e^{-x/μ}].
    fn linear_exponential_closed_form(a: f64, b: f64, mu: f64, x: f64) -> f64 {
        let e = (-x / mu).exp();
        (a + b * x) * (1.0 - e) - b * (mu - (x + mu) * e)
    }

    #[test]
    fn linear_integrand_matches_closed_form() {
        let dx = 0.01;
        for (a, b, mu, x) in [(0.2, 0.3, 1.0, 2.0), (0.5, 0.1, 1.0, 0.75), (0.0, 0.4, 2.0, 1.5)] {
            let col = linear_column(300, dx, a, b);
            let claims = ClaimDistribution::Exponential { mean: mu };
            let got = jump_value(&col, dx, &claims, x, 1.0, 64).unwrap();
            let want = linear_exponential_closed_form(a, b, mu, x);
            assert!((got - want).abs() < 1e-6, "a={a} b={b} mu={mu} x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn operator_matches_direct_quadrature() {
        let dx = 0.05;
        let col: Vec<f64> = (0..=40).map(|j| 1.0 - (-(j as f64) * dx).exp() * 0.8).collect();
        let claims = ClaimDistribution::Gamma { shape: 2.0, scale: 0.5 };
        let points: Vec<(f64, f64)> = (0..=40)
            .flat_map(|j| [0.0, 0.3, 1.0].map(move |q| (j as f64 * dx + 0.013, q)))
            .chain([(-0.1, 0.5), (5.0, 1.0)])
            .collect();
        let op = JumpOperator::new(&claims, 41, dx, &points, 32).unwrap();
        let mut out = vec![0.0; points.len()];
        op.apply(&col, &mut out);
        for (r, &(x, q)) in points.iter().enumerate() {
            let direct = jump_value(&col, dx, &claims, x, q, 32).unwrap();
            assert!((out[r] - direct).abs() < 1e-13, "row {r}: {} vs {direct}", out[r]);
        }
    }
}
