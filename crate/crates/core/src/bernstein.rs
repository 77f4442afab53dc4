//! Closed-form Bernstein-type bounds on second derivatives.
//!
//! Each bound has the form `|P''(x)| ≤ C·S(x)·‖P‖∞` where the scaling `S` is
//! `m²` for the Fourier and Chebyshev families, `1` for Laplace sums and
//! `x⁻²` for Müntz systems.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{domain_err, Result};

/// Families with a known second-derivative Bernstein constant.
#[derive(Debug, Clone, PartialEq)]
pub enum BernsteinFamily {
    /// Trigonometric polynomials of degree `f_c`, anywhere on the circle.
    Fourier,
    /// Algebraic polynomials of degree `m` on `[lo, hi] ⊂ (-1, 1)`.
    Chebyshev { lo: f64, hi: f64 },
    /// Exponential sums `Σ c_i exp(-λ_i x)` on `[0, ∞)`.
    Laplace { rates: Vec<f64> },
    /// `{1, x^α_1, …, x^α_m}` on `(0, 1 - η)`; `c_eta` is the family constant.
    MuntzI { c_eta: f64, eta: f64 },
    /// `{x^α_0, …, x^α_m}` with `α_0 > 1`, on `(0, 1]`.
    MuntzII { exponents: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BernsteinScaling {
    /// Multiply by `effective_m²`.
    DegreeSquared,
    /// Absolute bound.
    Absolute,
    /// Multiply by `x⁻²`.
    InverseSquare,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BernsteinBound {
    pub constant: f64,
    pub scaling: BernsteinScaling,
}

impl BernsteinBound {
    /// The bound on `|P''(x)| / ‖P‖∞` at `x` for effective degree `m`.
    pub fn at(&self, m: usize, x: f64) -> f64 {
        match self.scaling {
            BernsteinScaling::DegreeSquared => self.constant * (m * m) as f64,
            BernsteinScaling::Absolute => self.constant,
            BernsteinScaling::InverseSquare => self.constant / (x * x),
        }
    }
}

pub fn bernstein_constant(family: &BernsteinFamily) -> Result<BernsteinBound> {
    use BernsteinScaling::*;
    match family {
        BernsteinFamily::Fourier => Ok(BernsteinBound {
            constant: PI * PI,
            scaling: DegreeSquared,
        }),
        BernsteinFamily::Chebyshev { lo, hi } => {
            if !(lo <= hi) || *lo <= -1.0 || *hi >= 1.0 {
                return domain_err(format!(
                    "Chebyshev region [{lo}, {hi}] must be a nonempty interval inside (-1, 1)"
                ));
            }
            // √(1 - x²) is smallest at the endpoint closest to ±1
            let edge = lo.abs().max(hi.abs());
            let r2 = 1.0 - edge * edge;
            Ok(BernsteinBound {
                constant: 4.0 / r2,
                scaling: DegreeSquared,
            })
        }
        BernsteinFamily::Laplace { rates } => {
            if rates.is_empty() || rates.iter().any(|r| !(*r > 0.0)) {
                return domain_err("Laplace rates must be positive");
            }
            let s: f64 = rates.iter().sum();
            if !s.is_finite() {
                return domain_err("Laplace rates must have a finite sum");
            }
            Ok(BernsteinBound {
                constant: (9.0 * s).powi(2),
                scaling: Absolute,
            })
        }
        BernsteinFamily::MuntzI { c_eta, eta } => {
            if !(*eta > 0.0 && *eta < 1.0) || !(*c_eta > 0.0) {
                return domain_err("Müntz I needs 0 < η < 1 and a positive constant");
            }
            Ok(BernsteinBound {
                constant: *c_eta,
                scaling: InverseSquare,
            })
        }
        BernsteinFamily::MuntzII { exponents } => {
            if exponents.is_empty() || exponents.iter().any(|a| !(*a > 1.0)) {
                return domain_err("Müntz II exponents must exceed 1");
            }
            let s: f64 = exponents.iter().sum();
            Ok(BernsteinBound {
                constant: 81.0 * s * (s + 1.0),
                scaling: InverseSquare,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fourier_is_pi_squared() {
        let b = bernstein_constant(&BernsteinFamily::Fourier).unwrap();
        assert!((b.constant - 9.869_604_401_089_358).abs() < 1e-12);
        assert_eq!(b.at(10, 0.3), b.constant * 100.0);
    }

    #[test]
    fn chebyshev_region_constant() {
        let c0: f64 = 0.2;
        let b = bernstein_constant(&BernsteinFamily::Chebyshev { lo: -c0, hi: c0 }).unwrap();
        assert!((b.constant - 4.0 / (1.0 - c0 * c0)).abs() < 1e-12);
        assert!(bernstein_constant(&BernsteinFamily::Chebyshev { lo: -1.0, hi: 0.0 }).is_err());
        assert!(bernstein_constant(&BernsteinFamily::Chebyshev { lo: 0.2, hi: 1.0 }).is_err());
    }

    #[test]
    fn laplace_geometric_rates() {
        let rates: Vec<f64> = (0..60).map(|i| 0.5f64.powi(i)).collect();
        let b = bernstein_constant(&BernsteinFamily::Laplace { rates }).unwrap();
        assert!((b.constant - 324.0).abs() < 1e-9);
        assert_eq!(b.scaling, BernsteinScaling::Absolute);
    }

    #[test]
    fn muntz_constants() {
        let b = bernstein_constant(&BernsteinFamily::MuntzII { exponents: vec![1.5, 2.5] }).unwrap();
        assert!((b.constant - 81.0 * 4.0 * 5.0).abs() < 1e-9);
        assert!((b.at(3, 0.5) - 4.0 * b.constant).abs() < 1e-9);
        let b = bernstein_constant(&BernsteinFamily::MuntzI { c_eta: 7.0, eta: 0.1 }).unwrap();
        assert_eq!(b.scaling, BernsteinScaling::InverseSquare);
        assert!(bernstein_constant(&BernsteinFamily::MuntzII { exponents: vec![0.5] }).is_err());
    }
}
