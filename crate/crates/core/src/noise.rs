//! Gaussian noise models, Rice tail bounds for the noise polynomial and
//! the λ calibration rules built on them.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Result};
use crate::family::{MeasurementFamily, SampleVector};
use crate::grid::{sup_norm_refined, ChartGrid, SupBound};

/// Logarithm used in the λ rules. Natural log; kept as a named constant so
/// other bases can be audited by swapping it.
pub const LOG_BASE: f64 = std::f64::consts::E;

fn log(x: f64) -> f64 {
    x.ln() / LOG_BASE.ln()
}

/// Two-sided 95% normal quantile used by the Wilson interval.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    ComplexGaussian,
    RealGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(kind: NoiseKind, sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return domain_err(format!("noise level must be finite and nonnegative, got {sigma}"));
        }
        Ok(Self { kind, sigma, seed })
    }

    /// The model matching a family: complex for Fourier, real for Chebyshev.
    pub fn for_family(fam: MeasurementFamily, sigma: f64, seed: u64) -> Result<Self> {
        let kind = match fam {
            MeasurementFamily::Fourier { .. } => NoiseKind::ComplexGaussian,
            MeasurementFamily::Chebyshev { .. } => NoiseKind::RealGaussian,
        };
        Self::new(kind, sigma, seed)
    }

    /// The same model on substream `trial`.
    pub fn substream(&self, trial: u64) -> Self {
        Self {
            seed: self.seed ^ trial,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailBound {
    pub u: f64,
    pub probability_bound: f64,
    pub regime_valid: bool,
}

/// Tail bound on `max |Σ ξ_k φ_k|` over the Chebyshev family of degree `m`
/// with standard normal coefficients.
pub fn rice_poly_tail(m: usize, u: f64) -> Result<TailBound> {
    if !(u > 0.0) {
        return domain_err(format!("level must be positive, got {u}"));
    }
    let mf = m as f64;
    let var = 1.0 + 2.0 * mf;
    if m < 12 || u <= var.sqrt() {
        return Ok(TailBound {
            u,
            probability_bound: 1.0,
            regime_valid: false,
        });
    }
    let raw = 4.0 * mf * (1.0 + u) / TAU.sqrt() * (-u * u / var).exp();
    Ok(TailBound {
        u,
        probability_bound: raw.min(1.0),
        regime_valid: true,
    })
}

/// Tail bound on `sup |Σ ε_k φ_k|` over the Fourier family with cut-off `f_c`
/// and complex coefficients whose parts are standard normal.
pub fn rice_fourier_tail(fc: usize, u: f64) -> Result<TailBound> {
    if fc < 1 {
        return domain_err("Fourier cut-off must be at least 1");
    }
    if !(u > 2f64.sqrt()) {
        return Ok(TailBound {
            u,
            probability_bound: 1.0,
            regime_valid: false,
        });
    }
    let f = fc as f64;
    let s = 2.0 * f + 1.0;
    let raw = 4.0 * ((-u * u / (2.0 * s)).exp() + (f * (f + 1.0) / 3.0).sqrt() * (-u * u / (4.0 * s)).exp());
    Ok(TailBound {
        u,
        probability_bound: raw.min(1.0),
        regime_valid: true,
    })
}

/// The tail bound matching a family, at level `u` for noise level `sigma`.
pub fn family_tail(fam: MeasurementFamily, sigma: f64, u: f64) -> Result<TailBound> {
    if sigma == 0.0 {
        return Ok(TailBound {
            u,
            probability_bound: 0.0,
            regime_valid: true,
        });
    }
    let mut tb = match fam {
        MeasurementFamily::Fourier { fc } => rice_fourier_tail(fc, u / sigma)?,
        MeasurementFamily::Chebyshev { degree } => rice_poly_tail(degree, u / sigma)?,
    };
    tb.u = u;
    Ok(tb)
}

/// `λ_F = 2σ √(6 f_c log f_c)`.
pub fn lambda_fourier(fc: usize, sigma: f64) -> Result<f64> {
    if fc < 2 {
        return domain_err("λ_F needs f_c ≥ 2");
    }
    if !(sigma > 0.0) {
        return domain_err("λ_F needs σ > 0");
    }
    let f = fc as f64;
    Ok(2.0 * sigma * (6.0 * f * log(f)).sqrt())
}

/// `λ_M = σ √(6 m log m)`.
pub fn lambda_moment(m: usize, sigma: f64) -> Result<f64> {
    if m < 9 {
        return domain_err("λ_M needs m ≥ 9");
    }
    if !(sigma > 0.0) {
        return domain_err("λ_M needs σ > 0");
    }
    let mf = m as f64;
    Ok(sigma * (6.0 * mf * log(mf)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CalibrationCase {
    Fourier { fc: usize, sigma: f64 },
    Moment { m: usize, sigma: f64 },
}

/// Probability that the noise polynomial exceeds `lambda` in sup norm, as
/// stated for the corresponding λ rule. Requires `lambda` at or above the rule.
pub fn failure_probability(case: CalibrationCase, lambda: f64) -> Result<f64> {
    let p = match case {
        CalibrationCase::Fourier { fc, sigma } => {
            let lf = lambda_fourier(fc, sigma)?;
            if lambda < lf * (1.0 - 1e-12) {
                return domain_err(format!("λ = {lambda} is below λ_F = {lf}"));
            }
            let r = lambda / lf;
            2.0 * (-log(fc as f64) * r * r).exp()
        }
        CalibrationCase::Moment { m, sigma } => {
            let lm = lambda_moment(m, sigma)?;
            if lambda < lm * (1.0 - 1e-12) {
                return domain_err(format!("λ = {lambda} is below λ_M = {lm}"));
            }
            let r = lambda / lm;
            let lg = log(m as f64);
            8.0 * 6f64.sqrt() / TAU.sqrt() * r * lg.sqrt() * (-(2.0 * r * r - 1.0) * lg).exp()
        }
    };
    Ok(p.clamp(0.0, 1.0))
}

/// A standard normal pair by Box–Muller.
fn box_muller(rng: &mut impl Rng) -> (f64, f64) {
    // 1 - U lies in (0, 1], so the log is finite
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (2.0 * PI * u2).sin_cos();
    (r * c, r * s)
}

/// One noise vector, deterministic in `model.seed`.
pub fn sample_noise(model: &NoiseModel, fam: MeasurementFamily) -> Result<SampleVector> {
    let values = match (model.kind, fam) {
        (NoiseKind::ComplexGaussian, MeasurementFamily::Fourier { .. }) => {
            let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
            (0..fam.size())
                .map(|_| {
                    let (a, b) = box_muller(&mut rng);
                    Complex64::new(model.sigma * a, model.sigma * b)
                })
                .collect()
        }
        (NoiseKind::RealGaussian, MeasurementFamily::Chebyshev { .. }) => {
            let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
            let n = fam.size();
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                let (a, b) = box_muller(&mut rng);
                out.push(Complex64::new(model.sigma * a, 0.0));
                if out.len() < n {
                    out.push(Complex64::new(model.sigma * b, 0.0));
                }
            }
            out
        }
        (kind, fam) => return domain_err(format!("{kind:?} noise does not match {fam:?}")),
    };
    SampleVector::new(fam, values)
}

/// Certified bracket on `λ₀ = ‖Σ ε̄_k φ_k‖∞`.
pub fn noise_sup(eps: &SampleVector) -> Result<SupBound> {
    let grid = 16 * eps.family.size();
    sup_norm_refined(&eps.as_polynomial(), grid, 1e-6, 200_000)
}

/// Empirical exceedance of one level with its 95% Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Exceedance {
    pub u: f64,
    pub exceed: usize,
    pub trials: usize,
    pub fraction: f64,
    pub low: f64,
    pub high: f64,
}

impl Exceedance {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.high - self.low)
    }
}

/// Wilson score interval at 95% for `k` successes out of `n`.
pub fn wilson_interval(k: usize, n: usize) -> (f64, f64) {
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n_f;
    let centre = (p + z2 / (2.0 * n_f)) / denom;
    let half = Z95 * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    let low = if k == 0 { 0.0 } else { (centre - half).max(0.0) };
    let high = if k == n { 1.0 } else { (centre + half).min(1.0) };
    (low, high)
}

/// Fraction of trials whose grid maximum of `|Σ ε̄_k φ_k|` exceeds each `u`.
/// Grid maxima never exceed the true supremum, so these fractions estimate
/// the tail from below.
pub fn monte_carlo_sup_tail(
    fam: MeasurementFamily,
    model: &NoiseModel,
    u_list: &[f64],
    trials: usize,
    grid_size: usize,
) -> Result<Vec<Exceedance>> {
    if trials < 100 {
        return domain_err(format!("need at least 100 trials, got {trials}"));
    }
    if grid_size < 8 * fam.size() {
        return domain_err(format!(
            "grid of {grid_size} points is too coarse; need at least {}",
            8 * fam.size()
        ));
    }
    let grid = ChartGrid::new(fam, grid_size);
    let maxima: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| -> Result<f64> {
            let eps = sample_noise(&model.substream(trial), fam)?;
            let series = eps.as_polynomial().chart_series();
            Ok(grid.evaluate(&series).iter().map(|v| v.norm()).fold(0.0, f64::max))
        })
        .collect::<Result<_>>()?;
    Ok(u_list
        .iter()
        .map(|&u| {
            let exceed = maxima.iter().filter(|&&m| m > u).count();
            let (low, high) = wilson_interval(exceed, trials);
            Exceedance {
                u,
                exceed,
                trials,
                fraction: exceed as f64 / trials as f64,
                low,
                high,
            }
        })
        .collect())
}

/// One row of the calibration table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationRow {
    pub u: f64,
    pub analytic_bound: f64,
    pub regime_valid: bool,
    pub mc_exceedance: f64,
    pub mc_low: f64,
    pub mc_high: f64,
    pub trials: usize,
}

/// Closed-form bound next to Monte Carlo exceedance for each level.
pub fn calibration_table(
    fam: MeasurementFamily,
    model: &NoiseModel,
    u_list: &[f64],
    trials: usize,
    grid_size: usize,
) -> Result<Vec<CalibrationRow>> {
    let mc = monte_carlo_sup_tail(fam, model, u_list, trials, grid_size)?;
    mc.iter()
        .map(|e| {
            let tb = family_tail(fam, model.sigma, e.u)?;
            Ok(CalibrationRow {
                u: e.u,
                analytic_bound: tb.probability_bound,
                regime_valid: tb.regime_valid,
                mc_exceedance: e.fraction,
                mc_low: e.low,
                mc_high: e.high,
                trials: e.trials,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs()
    }

    #[test]
    fn poly_tail_examples() {
        assert!(!rice_poly_tail(12, 5.0).unwrap().regime_valid);
        let t = rice_poly_tail(12, 20.0).unwrap();
        assert!(t.regime_valid);
        let oracle = 4.0 * 12.0 * 21.0 / (2.0 * PI).sqrt() * (-16.0f64).exp();
        assert!(close(t.probability_bound, oracle, 1e-12));
        assert!(close(t.probability_bound, 4.53e-5, 2e-3));
        let t = rice_poly_tail(100, 30.0).unwrap();
        let raw: f64 = 400.0 * 31.0 / (2.0 * PI).sqrt() * (-900.0f64 / 201.0).exp();
        assert_eq!(t.probability_bound, raw.min(1.0));
        assert!(rice_poly_tail(12, 0.0).is_err());
        assert!(!rice_poly_tail(11, 100.0).unwrap().regime_valid);
    }

    #[test]
    fn fourier_tail_examples() {
        assert!(!rice_fourier_tail(4, 1.0).unwrap().regime_valid);
        let lf = lambda_fourier(128, 1.0).unwrap();
        let t = rice_fourier_tail(128, lf).unwrap();
        assert!(close(t.probability_bound, 1.49e-4, 1e-2), "{}", t.probability_bound);
        let t = rice_fourier_tail(1, 10.0).unwrap();
        let oracle = 4.0 * ((-100.0f64 / 6.0).exp() + (2.0f64 / 3.0).sqrt() * (-100.0f64 / 12.0).exp());
        assert!(close(t.probability_bound, oracle, 1e-12));
        assert!(close(t.probability_bound, 7.85e-4, 5e-3));
    }

    #[test]
    fn lambda_rules() {
        let lf = lambda_fourier(128, 1.0).unwrap();
        assert!(close(lf, 2.0 * (768.0 * 128f64.ln()).sqrt(), 1e-14));
        assert!(close(lf, 122.088, 1e-4));
        assert!(close(lambda_fourier(128, 2.0).unwrap(), 2.0 * lf, 1e-14));
        assert!(lambda_fourier(4, 1.0).unwrap() > lambda_fourier(3, 1.0).unwrap());
        assert!(lambda_fourier(1, 1.0).is_err());
        assert!(close(lambda_moment(9, 1.0).unwrap(), 10.89, 1e-3));
        assert!(close(lambda_moment(100, 1.0).unwrap(), 52.56, 1e-3));
        assert!(close(lambda_moment(100, 0.5).unwrap(), 0.5 * lambda_moment(100, 1.0).unwrap(), 1e-14));
        assert!(lambda_moment(8, 1.0).is_err());
    }

    #[test]
    fn failure_probability_examples() {
        let case = CalibrationCase::Fourier { fc: 128, sigma: 1.0 };
        let lf = lambda_fourier(128, 1.0).unwrap();
        assert!(close(failure_probability(case, lf).unwrap(), 1.0 / 64.0, 1e-12));
        let p = failure_probability(case, 2.0 * lf).unwrap();
        assert!(close(p, 2.0 * 128f64.powi(-4), 1e-10));
        assert!(failure_probability(case, 0.5 * lf).is_err());
        let case = CalibrationCase::Moment { m: 100, sigma: 1.0 };
        let lm = lambda_moment(100, 1.0).unwrap();
        let p = failure_probability(case, lm).unwrap();
        let oracle = 8.0 * 6f64.sqrt() / (2.0 * PI).sqrt() * 100f64.ln().sqrt() / 100.0;
        assert!(close(p, oracle, 1e-12));
        assert!(close(p, 0.168, 2e-3));
    }

    #[test]
    fn noise_is_deterministic_and_matched() {
        let fam = MeasurementFamily::fourier(8).unwrap();
        let m = NoiseModel::for_family(fam, 1.0, 7).unwrap();
        assert_eq!(sample_noise(&m, fam).unwrap(), sample_noise(&m, fam).unwrap());
        assert_ne!(sample_noise(&m, fam).unwrap(), sample_noise(&m.substream(1), fam).unwrap());
        let zero = NoiseModel::for_family(fam, 0.0, 7).unwrap();
        assert!(sample_noise(&zero, fam).unwrap().values.iter().all(|v| v.norm() == 0.0));
        let cheb = MeasurementFamily::chebyshev(5).unwrap();
        assert!(sample_noise(&m, cheb).is_err());
        let real = NoiseModel::for_family(cheb, 1.0, 3).unwrap();
        assert!(sample_noise(&real, cheb).unwrap().values.iter().all(|v| v.im == 0.0));
    }

    #[test]
    fn complex_noise_variance() {
        let fam = MeasurementFamily::fourier(64).unwrap();
        let model = NoiseModel::for_family(fam, 1.0, 2024).unwrap();
        let draws = 10_000u64;
        let n = fam.size();
        let mut sum_re = vec![0.0; n];
        let mut sum_im = vec![0.0; n];
        for t in 0..draws {
            let e = sample_noise(&model.substream(t), fam).unwrap();
            for (k, v) in e.values.iter().enumerate() {
                sum_re[k] += v.re * v.re;
                sum_im[k] += v.im * v.im;
            }
        }
        // each real component pooled over indices
        let total = (draws as usize * n) as f64;
        let vr = sum_re.iter().sum::<f64>() / total;
        let vi = sum_im.iter().sum::<f64>() / total;
        assert!((0.97..=1.03).contains(&vr), "re variance {vr}");
        assert!((0.97..=1.03).contains(&vi), "im variance {vi}");
        // per index, at five standard errors of a variance estimate
        let tol = 5.0 * (2.0 / draws as f64).sqrt();
        for k in 0..n {
            assert!((sum_re[k] / draws as f64 - 1.0).abs() < tol);
            assert!((sum_im[k] / draws as f64 - 1.0).abs() < tol);
        }
    }

    #[test]
    fn wilson_interval_brackets() {
        let (lo, hi) = wilson_interval(0, 100);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.03 && hi < 0.04);
        let (lo, hi) = wilson_interval(50, 100);
        assert!(lo < 0.5 && hi > 0.5);
        assert!(close(0.5 * (lo + hi), 0.5, 1e-12));
    }

    #[test]
    fn monte_carlo_zero_noise() {
        let fam = MeasurementFamily::fourier(8).unwrap();
        let model = NoiseModel::for_family(fam, 0.0, 1).unwrap();
        let mc = monte_carlo_sup_tail(fam, &model, &[0.1, 1.0], 100, 8 * fam.size()).unwrap();
        assert!(mc.iter().all(|e| e.exceed == 0));
        assert!(monte_carlo_sup_tail(fam, &model, &[1.0], 99, 8 * fam.size()).is_err());
        assert!(monte_carlo_sup_tail(fam, &model, &[1.0], 100, 8 * fam.size() - 1).is_err());
    }

    #[test]
    fn monte_carlo_dominated_fourier() {
        let fam = MeasurementFamily::fourier(32).unwrap();
        let model = NoiseModel::for_family(fam, 1.0, 11).unwrap();
        let lf = lambda_fourier(32, 1.0).unwrap();
        let e = monte_carlo_sup_tail(fam, &model, &[lf], 2000, 8 * fam.size()).unwrap()[0];
        let b = rice_fourier_tail(32, lf).unwrap().probability_bound;
        assert!(e.fraction <= b + e.half_width());
    }

    #[test]
    fn monte_carlo_dominated_chebyshev() {
        let fam = MeasurementFamily::chebyshev(16).unwrap();
        let model = NoiseModel::for_family(fam, 1.0, 5).unwrap();
        let u = 2.0 * 33f64.sqrt();
        let e = monte_carlo_sup_tail(fam, &model, &[u], 2000, 8 * fam.size()).unwrap()[0];
        let b = rice_poly_tail(16, u).unwrap();
        assert!(b.regime_valid);
        assert!(e.fraction <= b.probability_bound + e.half_width());
    }

    proptest! {
        #[test]
        fn tails_decrease(m in 12usize..200, a in 0.0f64..50.0, d in 0.01f64..10.0) {
            let u0 = (1.0 + 2.0 * m as f64).sqrt() + 1e-6 + a;
            let t0 = rice_poly_tail(m, u0).unwrap();
            let t1 = rice_poly_tail(m, u0 + d).unwrap();
            // strict once out of the clamp
            if t0.probability_bound < 1.0 {
                prop_assert!(t1.probability_bound < t0.probability_bound);
            } else {
                prop_assert!(t1.probability_bound <= t0.probability_bound);
            }
            let fc = m;
            let v0 = 2f64.sqrt() + 1e-6 + 4.0 * a;
            let f0 = rice_fourier_tail(fc, v0).unwrap();
            let f1 = rice_fourier_tail(fc, v0 + d).unwrap();
            if f0.probability_bound < 1.0 {
                prop_assert!(f1.probability_bound < f0.probability_bound);
            } else {
                prop_assert!(f1.probability_bound <= f0.probability_bound);
            }
        }

        #[test]
        fn lambdas_increase(n in 9usize..5000, s in 0.01f64..100.0, ds in 0.01f64..1.0) {
            prop_assert!(lambda_fourier(n + 1, s).unwrap() > lambda_fourier(n, s).unwrap());
            prop_assert!(lambda_fourier(n, s + ds).unwrap() > lambda_fourier(n, s).unwrap());
            prop_assert!(lambda_moment(n + 1, s).unwrap() > lambda_moment(n, s).unwrap());
            prop_assert!(lambda_moment(n, s + ds).unwrap() > lambda_moment(n, s).unwrap());
        }

        #[test]
        fn fourier_failure_nonincreasing(fc in 2usize..1000, r in 1.0f64..5.0, dr in 0.0f64..1.0) {
            let case = CalibrationCase::Fourier { fc, sigma: 1.0 };
            let lf = lambda_fourier(fc, 1.0).unwrap();
            let p0 = failure_probability(case, r * lf).unwrap();
            let p1 = failure_probability(case, (r + dr) * lf).unwrap();
            prop_assert!(p1 <= p0);
        }
    }
}
