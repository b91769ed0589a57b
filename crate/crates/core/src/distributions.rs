//! Inter-arrival and claim-size laws.
//!
//! Claim arrivals form a renewal process whose inter-arrival law is described
//! by its hazard rate `λ(w)`, where `w` is the time elapsed since the last
//! claim. Given `w`, the residual waiting time `t` has survival function
//! `exp(-(Λ(w + t) - Λ(w)))` with `Λ` the cumulative hazard; sampling inverts
//! that relation.

use serde::{Deserialize, Serialize};
use statrs::function::{erf, gamma};

use crate::error::{domain, Error, Result};

/// Relative tolerance for the bracketed inversions.
const ROOT_REL_TOL: f64 = 1e-12;
const MAX_BRACKET_DOUBLINGS: usize = 200;
const MAX_BISECTIONS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HazardModel {
    /// Poisson arrivals with rate `rate`.
    ConstantRate { rate: f64 },
    /// Sum of `k` exponential phases with rate `rate` each.
    Erlang { k: u32, rate: f64 },
    /// `F̄(t) = exp(-(t / scale)^shape)`.
    Weibull { shape: f64, scale: f64 },
}

impl HazardModel {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        match *self {
            HazardModel::ConstantRate { rate } if !ok(rate) => {
                domain(format!("hazard rate must be > 0, got {rate}"))
            }
            HazardModel::Erlang { k, .. } if k == 0 => domain("erlang k must be >= 1"),
            HazardModel::Erlang { rate, .. } if !ok(rate) => {
                domain(format!("erlang rate must be > 0, got {rate}"))
            }
            HazardModel::Weibull { shape, .. } if !ok(shape) => {
                domain(format!("weibull shape must be > 0, got {shape}"))
            }
            HazardModel::Weibull { scale, .. } if !ok(scale) => {
                domain(format!("weibull scale must be > 0, got {scale}"))
            }
            _ => Ok(()),
        }
    }

    /// Intensity `λ(w) = f(w) / F̄(w)`.
    ///
    /// Weibull laws with `shape < 1` have an infinite intensity at `w = 0`;
    /// that value is returned as `f64::INFINITY`.
    pub fn hazard(&self, w: f64) -> Result<f64> {
        check_elapsed(w)?;
        Ok(match *self {
            HazardModel::ConstantRate { rate } => rate,
            HazardModel::Erlang { k, rate } => {
                if k == 1 {
                    return Ok(rate);
                }
                let z = rate * w;
                if z == 0.0 {
                    return Ok(0.0);
                }
                // ρ (z^{k-1}/(k-1)!) / Σ_{n<k} z^n/n!, in log space
                let ln_top = (k - 1) as f64 * z.ln() - gamma::ln_gamma(k as f64);
                rate * (ln_top - ln_erlang_tail_sum(k, z)).exp()
            }
            HazardModel::Weibull { shape, scale } => {
                if w == 0.0 {
                    return Ok(match shape {
                        a if a < 1.0 => f64::INFINITY,
                        a if a == 1.0 => 1.0 / scale,
                        _ => 0.0,
                    });
                }
                shape / scale * (w / scale).powf(shape - 1.0)
            }
        })
    }

    /// `Λ(w) = ∫₀ʷ λ(u) du`.
    pub fn cumulative_hazard(&self, w: f64) -> Result<f64> {
        check_elapsed(w)?;
        Ok(match *self {
            HazardModel::ConstantRate { rate } => rate * w,
            HazardModel::Erlang { k, rate } => {
                let z = rate * w;
                if z == 0.0 {
                    0.0
                } else {
                    (z - ln_erlang_tail_sum(k, z)).max(0.0)
                }
            }
            HazardModel::Weibull { shape, scale } => (w / scale).powf(shape),
        })
    }

    /// `Λ(w + h) - Λ(w)`, exact for a constant rate.
    pub fn hazard_increment(&self, w: f64, h: f64) -> Result<f64> {
        check_elapsed(h)?;
        Ok(match *self {
            HazardModel::ConstantRate { rate } => {
                check_elapsed(w)?;
                rate * h
            }
            _ => (self.cumulative_hazard(w + h)? - self.cumulative_hazard(w)?).max(0.0),
        })
    }

    /// `F̄(w) = exp(-Λ(w))`.
    pub fn survival(&self, w: f64) -> Result<f64> {
        Ok((-self.cumulative_hazard(w)?).exp())
    }

    /// Residual waiting time until the next arrival given elapsed time `w`,
    /// by inversion of the conditional survival function at `u`.
    pub fn sample_interarrival(&self, w: f64, u: f64) -> Result<f64> {
        check_elapsed(w)?;
        if !(u > 0.0 && u < 1.0) {
            return domain(format!("uniform draw must lie in (0, 1), got {u}"));
        }
        let target = -u.ln();
        match *self {
            HazardModel::ConstantRate { rate } => Ok(target / rate),
            HazardModel::Weibull { shape, scale } => {
                let base = self.cumulative_hazard(w)?;
                Ok((scale * (base + target).powf(1.0 / shape) - w).max(0.0))
            }
            HazardModel::Erlang { rate, .. } => {
                let base = self.cumulative_hazard(w)?;
                let excess = |t: f64| -> Result<f64> {
                    Ok(self.cumulative_hazard(w + t)? - base - target)
                };
                // λ ≤ ρ for Erlang, so the root is at least target/ρ.
                bisect_increasing(excess, target / rate)
            }
        }
    }
}

fn check_elapsed(w: f64) -> Result<()> {
    if !w.is_finite() || w < 0.0 {
        return domain(format!("elapsed time must be finite and >= 0, got {w}"));
    }
    Ok(())
}

/// `ln Σ_{n<k} z^n / n!` via log-sum-exp.
fn ln_erlang_tail_sum(k: u32, z: f64) -> f64 {
    let ln_z = z.ln();
    let terms: Vec<f64> = (0..k)
        .map(|n| n as f64 * ln_z - gamma::ln_gamma(n as f64 + 1.0))
        .collect();
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
}

/// Root of a nondecreasing function on `[0, ∞)` with `f(0) <= 0`, by bisection
/// on a doubling bracket.
fn bisect_increasing<F>(f: F, first_guess: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let mut lo = 0.0;
    let mut hi = if first_guess > 0.0 { first_guess } else { 1.0 };
    let mut doublings = 0;
    while f(hi)? < 0.0 {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_BRACKET_DOUBLINGS || !hi.is_finite() {
            return Err(Error::Numerical(format!(
                "failed to bracket root after {doublings} doublings"
            )));
        }
    }
    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= ROOT_REL_TOL * hi {
            return Ok(0.5 * (lo + hi));
        }
        let mid = 0.5 * (lo + hi);
        if f(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Numerical(format!(
        "bisection did not reach relative tolerance {ROOT_REL_TOL} on [{lo}, {hi}]"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClaimDistribution {
    Exponential { mean: f64 },
    Gamma { shape: f64, scale: f64 },
    LogNormal { meanlog: f64, sdlog: f64 },
}

impl ClaimDistribution {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        match *self {
            ClaimDistribution::Exponential { mean } if !ok(mean) => {
                domain(format!("claim mean must be > 0, got {mean}"))
            }
            ClaimDistribution::Gamma { shape, scale } if !ok(shape) || !ok(scale) => domain(
                format!("gamma shape and scale must be > 0, got ({shape}, {scale})"),
            ),
            ClaimDistribution::LogNormal { meanlog, sdlog } if !meanlog.is_finite() || !ok(sdlog) => {
                domain(format!(
                    "lognormal meanlog must be finite and sdlog > 0, got ({meanlog}, {sdlog})"
                ))
            }
            _ => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ClaimDistribution::Exponential { mean } => mean,
            ClaimDistribution::Gamma { shape, scale } => shape * scale,
            ClaimDistribution::LogNormal { meanlog, sdlog } => (meanlog + 0.5 * sdlog * sdlog).exp(),
        }
    }

    pub fn cdf(&self, y: f64) -> Result<f64> {
        if y.is_nan() || y < 0.0 {
            return domain(format!("claim size must be >= 0, got {y}"));
        }
        Ok(self.cdf_unchecked(y))
    }

    pub(crate) fn cdf_unchecked(&self, y: f64) -> f64 {
        if y == f64::INFINITY {
            return 1.0;
        }
        match *self {
            ClaimDistribution::Exponential { mean } => -(-y / mean).exp_m1(),
            ClaimDistribution::Gamma { shape, scale } => {
                if y == 0.0 {
                    0.0
                } else {
                    gamma::gamma_lr(shape, y / scale)
                }
            }
            ClaimDistribution::LogNormal { meanlog, sdlog } => {
                if y == 0.0 {
                    0.0
                } else {
                    0.5 * erf::erfc(-(y.ln() - meanlog) / (sdlog * std::f64::consts::SQRT_2))
                }
            }
        }
    }

    fn pdf(&self, y: f64) -> f64 {
        match *self {
            ClaimDistribution::Exponential { mean } => (-y / mean).exp() / mean,
            ClaimDistribution::Gamma { shape, scale } => {
                let z = y / scale;
                ((shape - 1.0) * z.ln() - z - gamma::ln_gamma(shape)).exp() / scale
            }
            ClaimDistribution::LogNormal { meanlog, sdlog } => {
                let d = (y.ln() - meanlog) / sdlog;
                (-0.5 * d * d).exp() / (y * sdlog * (2.0 * std::f64::consts::PI).sqrt())
            }
        }
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return domain(format!("probability must lie in (0, 1), got {u}"));
        }
        match *self {
            ClaimDistribution::Exponential { mean } => Ok(-mean * (-u).ln_1p()),
            ClaimDistribution::LogNormal { meanlog, sdlog } => {
                Ok((meanlog + sdlog * standard_normal_quantile(u)).exp())
            }
            ClaimDistribution::Gamma { shape, scale } => self.gamma_quantile(u, shape, scale),
        }
    }

    /// Inverse-transform draw; identical to [`ClaimDistribution::quantile`].
    pub fn sample(&self, u: f64) -> Result<f64> {
        self.quantile(u)
    }

    /// Safeguarded Newton on the regularized incomplete gamma function.
    fn gamma_quantile(&self, u: f64, shape: f64, scale: f64) -> Result<f64> {
        let mut lo = 0.0;
        let mut hi = shape * scale;
        while self.cdf_unchecked(hi) < u {
            lo = hi;
            hi *= 2.0;
            if !hi.is_finite() {
                return Err(Error::Numerical(format!("gamma quantile bracket overflow at u={u}")));
            }
        }
        let mut y = 0.5 * (lo + hi);
        for _ in 0..MAX_BISECTIONS {
            let err = self.cdf_unchecked(y) - u;
            if err < 0.0 {
                lo = y;
            } else {
                hi = y;
            }
            let density = self.pdf(y);
            let newton = y - err / density;
            let next = if density > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - y).abs() <= 1e-15 * y.max(f64::MIN_POSITIVE) || hi - lo <= 1e-15 * hi {
                return Ok(next);
            }
            y = next;
        }
        Err(Error::Numerical(format!("gamma quantile did not converge at u={u}")))
    }
}

/// Φ⁻¹(u), using whichever tail keeps the erfc argument well conditioned.
fn standard_normal_quantile(u: f64) -> f64 {
    let sqrt2 = std::f64::consts::SQRT_2;
    if u <= 0.5 {
        -sqrt2 * erf::erfc_inv(2.0 * u)
    } else {
        sqrt2 * erf::erfc_inv(2.0 * (1.0 - u))
    }
}
