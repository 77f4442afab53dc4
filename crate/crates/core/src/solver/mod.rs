//! Beurling LASSO by its Fenchel dual.
//!
//! `min_μ ½‖c(μ) − y‖² + λ‖μ‖_TV` is solved through the dual projection of
//! `y/λ` onto `{a : ‖P_a‖∞ ≤ 1}`. The support is read off the points where
//! the dual polynomial touches modulus one, amplitudes come from the finite
//! LASSO restricted to that support, and both optimality conditions are
//! checked with a certified sup norm.

mod dual;
pub mod oracle;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Error, Result};
use crate::family::{forward, inner, norm2, GeneralizedPolynomial, MeasurementFamily, SampleVector};
use crate::grid::{local_maxima, sup_norm_refined, SupBound};
use crate::measure::{tv_norm, DiscreteMeasure};

pub use dual::dual_objective;
pub use oracle::{grid_lasso_oracle, OracleResult};

/// Atoms with modulus below this are dropped after fitting.
pub const AMPLITUDE_DROP: f64 = 1e-10;
/// Condition number of `Φ_S` above which a fit is flagged.
pub const ILL_CONDITIONED: f64 = 1e10;
/// Safety factor on the first-order rounding estimate of the dual point.
const ROUNDOFF_SAFETY: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda: f64,
    /// Nodes of the chart grid on which constraints are scanned.
    pub dual_grid: usize,
    /// Exchange rounds.
    pub max_iters: usize,
    /// Relative gap `(F − D)/(1 + |F|)` at which the dual is accepted.
    pub primal_dual_gap_tol: f64,
    pub delta_sup: f64,
    /// Merge radius and peak refinement tolerance, in domain units.
    pub refine_tol: f64,
    /// Tolerance of the optimality check.
    pub optimality_tol: f64,
    /// Also report a least-squares refit on the detected support.
    pub unpenalized_refit: bool,
}

impl SolverConfig {
    pub fn new(fam: MeasurementFamily, lambda: f64) -> Self {
        Self {
            lambda,
            dual_grid: 8 * fam.size(),
            max_iters: 200,
            primal_dual_gap_tol: 1e-10,
            delta_sup: 1e-3,
            refine_tol: 1e-6 * fam.domain().length(),
            optimality_tol: 1e-5,
            unpenalized_refit: false,
        }
    }

    pub fn validate(&self, fam: MeasurementFamily) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("λ must be positive, got {}", self.lambda)));
        }
        if self.dual_grid < 8 * fam.size() {
            return Err(Error::Config(format!(
                "dual_grid {} is below 8 × family size = {}",
                self.dual_grid,
                8 * fam.size()
            )));
        }
        let tols = [self.primal_dual_gap_tol, self.refine_tol, self.optimality_tol];
        if tols.iter().any(|t| !(*t > 0.0)) || self.max_iters == 0 {
            return Err(Error::Config("tolerances and max_iters must be positive".into()));
        }
        if !(self.delta_sup > 0.0 && self.delta_sup < 1.0) {
            return Err(Error::Config(format!("delta_sup must lie in (0, 1), got {}", self.delta_sup)));
        }
        Ok(())
    }
}

/// Output of [`solve_dual`].
#[derive(Debug, Clone)]
pub struct DualSolution {
    /// `â`, so that `P̂ = Σ conj(â_k) φ_k`.
    pub coefficients: GeneralizedPolynomial,
    pub sup: SupBound,
    /// `max(0, certified ‖P̂‖∞ − 1)`.
    pub feasibility_slack: f64,
    pub primal_objective: f64,
    /// `D(â / max(1, ‖P̂‖∞))`, a certified lower bound on the optimum.
    pub dual_objective: f64,
    /// Relative gap `(F − D)/(1 + |F|)`.
    pub gap: f64,
    /// Gap that rounding in the dual point alone can produce. The solver
    /// stops at the larger of this and the configured tolerance.
    pub gap_floor: f64,
    pub rounds: usize,
    /// Locations of the atoms carried by the solver at exit.
    pub active_set: Vec<f64>,
    /// Their weights; `r = y − Σ w_j φ(x_j)` is `λ` times the dual point.
    pub active_weights: Vec<Complex64>,
}

/// Projects `y/λ` onto the dual feasible set.
pub fn solve_dual(fam: MeasurementFamily, y: &SampleVector, cfg: &SolverConfig) -> Result<DualSolution> {
    cfg.validate(fam)?;
    if y.family != fam {
        return domain_err("samples belong to a different family");
    }
    let lambda = cfg.lambda;
    let grid = cfg.dual_grid;
    let mut engine = dual::DualEngine::new(fam, &y.values, lambda, cfg.refine_tol);
    let mut last_gap = f64::INFINITY;
    let y_l1: f64 = y.values.iter().map(|v| v.norm()).sum();
    for round in 0..=cfg.max_iters {
        if round > 0 {
            engine.settle();
            engine.refresh();
        }
        let a = engine.dual_point();
        let sup = dual::certify(&a, grid)?;
        let primal = engine.objective();
        let scale = sup.upper.max(1.0);
        let scaled: Vec<Complex64> = a.coefficients.iter().map(|v| v / scale).collect();
        let d = dual_objective(&y.values, &scaled, lambda);
        let gap = (primal - d).max(0.0) / (1.0 + primal.abs());
        last_gap = gap;
        // rounding in r = y − Σ c φ perturbs |P| by about `noise`, and the
        // rescaling by the certified sup turns that into this much gap
        let tv: f64 = engine.atoms.iter().map(|a| a.c.norm()).sum();
        let noise = ROUNDOFF_SAFETY
            * (engine.atoms.len() as f64 + 2.0)
            * f64::EPSILON
            * (y_l1 + std::f64::consts::SQRT_2 * fam.size() as f64 * tv)
            / lambda;
        let inflated: Vec<Complex64> = a.coefficients.iter().map(|v| v / (1.0 + noise)).collect();
        let gap_floor = (dual_objective(&y.values, &a.coefficients, lambda) - dual_objective(&y.values, &inflated, lambda))
            .max(0.0)
            / (1.0 + primal.abs());
        if gap <= cfg.primal_dual_gap_tol.max(gap_floor) {
            return Ok(DualSolution {
                coefficients: a,
                sup,
                feasibility_slack: (sup.upper - 1.0).max(0.0),
                primal_objective: primal,
                dual_objective: d,
                gap,
                gap_floor,
                rounds: round,
                active_set: engine.atoms.iter().map(|a| fam.chart_to_point(a.t)).collect(),
                active_weights: engine.atoms.iter().map(|a| a.c).collect(),
            });
        }
        if round < cfg.max_iters {
            engine.exchange(&a, grid);
        }
    }
    Err(Error::Numerical {
        message: format!("dual solver did not reach gap {} in {} rounds", cfg.primal_dual_gap_tol, cfg.max_iters),
        last_gap: Some(last_gap),
    })
}

/// Points where `|P̂|` reaches `1 − delta_sup`, refined and merged.
pub fn extract_support(p: &GeneralizedPolynomial, cfg: &SolverConfig) -> Vec<f64> {
    extract_support_seeded(p, cfg, &[])
}

/// [`extract_support`] with extra candidate locations, such as the active
/// set of the dual solver. Two contact points inside one grid cell show up as
/// a single grid maximum, so seeds recover the second one.
pub fn extract_support_seeded(p: &GeneralizedPolynomial, cfg: &SolverConfig, seeds: &[f64]) -> Vec<f64> {
    let fam = p.family;
    let series = p.chart_series();
    let (t_lo, t_hi) = fam.chart_range();
    let peaks = local_maxima(p, cfg.dual_grid, 1.0 - cfg.delta_sup, cfg.refine_tol * 1e-3);
    let starts = peaks.iter().map(|pk| pk.chart).chain(seeds.iter().map(|&x| fam.point_to_chart(x)));
    let mut polished: Vec<(f64, f64)> = starts
        .map(|t0| {
            // Newton on |P|² from the golden-section estimate
            let mut t = t0;
            let mut g = series.eval(t).norm_sqr();
            for _ in 0..40 {
                let [v, d1, d2] = series.eval3(t);
                let g1 = 2.0 * (v.conj() * d1).re;
                let g2 = 2.0 * (d1.norm_sqr() + (v.conj() * d2).re);
                if !(g2 < 0.0) {
                    break;
                }
                let step = (-g1 / g2).clamp(-cfg.refine_tol, cfg.refine_tol);
                let mut tn = t + step;
                if !fam.chart_is_periodic() {
                    tn = tn.clamp(t_lo, t_hi);
                }
                let gn = series.eval(tn).norm_sqr();
                if gn < g || (tn - t).abs() <= 1e-16 * t_hi {
                    break;
                }
                t = tn;
                g = gn;
            }
            (fam.chart_to_point(t), g.sqrt())
        })
        .filter(|(_, v)| *v >= 1.0 - cfg.delta_sup)
        .collect();
    polished.sort_by(|a, b| b.1.total_cmp(&a.1));
    let dom = fam.domain();
    let mut kept: Vec<(f64, f64)> = Vec::new();
    for (x, v) in polished {
        if kept.iter().all(|(k, _)| dom.distance(*k, x) > cfg.refine_tol) {
            kept.push((x, v));
        }
    }
    let mut out: Vec<f64> = kept.into_iter().map(|(x, _)| x).collect();
    out.sort_by(f64::total_cmp);
    out
}

#[derive(Debug, Clone)]
pub struct AmplitudeFit {
    pub measure: DiscreteMeasure,
    /// Ratio of extreme singular values of `Φ_S`.
    pub condition_number: f64,
    pub ill_conditioned: bool,
    pub iterations: usize,
    pub converged: bool,
}

fn design(fam: MeasurementFamily, support: &[f64]) -> Result<DMatrix<Complex64>> {
    let dom = fam.domain();
    for (i, &x) in support.iter().enumerate() {
        fam.check_point(x)?;
        for &z in &support[..i] {
            if dom.distance(x, z) == 0.0 {
                return domain_err(format!("support point {x} is repeated"));
            }
        }
    }
    let cols: Vec<Vec<Complex64>> = support.iter().map(|&x| fam.basis(x)).collect();
    Ok(DMatrix::from_fn(fam.size(), support.len(), |k, j| cols[j][k]))
}

fn condition_number(a: &DMatrix<Complex64>) -> f64 {
    let sv = a.clone().singular_values();
    let hi = sv.iter().cloned().fold(0.0f64, f64::max);
    let lo = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

fn soft(v: Complex64, t: f64) -> Complex64 {
    let n = v.norm();
    if n <= t {
        Complex64::new(0.0, 0.0)
    } else {
        v * (1.0 - t / n)
    }
}

/// Finite complex LASSO on a fixed support, by accelerated proximal gradient
/// with adaptive restart.
pub fn fit_amplitudes(
    fam: MeasurementFamily,
    support: &[f64],
    y: &SampleVector,
    lambda: f64,
) -> Result<AmplitudeFit> {
    if y.family != fam {
        return domain_err("samples belong to a different family");
    }
    if !(lambda >= 0.0) {
        return domain_err(format!("λ must be nonnegative, got {lambda}"));
    }
    if support.is_empty() {
        return Ok(AmplitudeFit {
            measure: DiscreteMeasure::empty(fam.domain()),
            condition_number: 1.0,
            ill_conditioned: false,
            iterations: 0,
            converged: true,
        });
    }
    let a = design(fam, support)?;
    let cond = condition_number(&a);
    let yv = nalgebra::DVector::from_column_slice(&y.values);
    let g = a.adjoint() * &a;
    let b = a.adjoint() * yv;
    let s = support.len();
    let lip = (0..s)
        .map(|i| (0..s).map(|j| g[(i, j)].norm()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let bmax = b.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
    let eps = 1e-12 * lambda + 1e-15 * bmax;
    let kkt = |x: &nalgebra::DVector<Complex64>| -> bool {
        let r = &b - &g * x;
        (0..s).all(|k| {
            if x[k].norm() > 0.0 {
                (r[k] - x[k] * (lambda / x[k].norm())).norm() <= eps
            } else {
                r[k].norm() <= lambda + eps
            }
        })
    };
    let mut x = nalgebra::DVector::from_element(s, Complex64::new(0.0, 0.0));
    let mut z = x.clone();
    let mut tk = 1.0f64;
    let max_iter = 200_000;
    let mut iters = 0;
    let mut converged = false;
    while iters < max_iter {
        iters += 1;
        let grad = &g * &z - &b;
        let xn = (&z - grad / Complex64::new(lip, 0.0)).map(|v| soft(v, lambda / lip));
        let restart = (&z - &xn).dotc(&(&xn - &x)).re > 0.0;
        if restart {
            tk = 1.0;
            z = xn.clone();
        } else {
            let tn = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
            z = &xn + (&xn - &x) * Complex64::new((tk - 1.0) / tn, 0.0);
            tk = tn;
        }
        x = xn;
        if iters % 8 == 0 && kkt(&x) {
            converged = true;
            break;
        }
    }
    let w: Vec<Complex64> = x.iter().copied().collect();
    let measure = DiscreteMeasure::from_complex(fam.domain(), support, &w, AMPLITUDE_DROP)?;
    Ok(AmplitudeFit {
        measure,
        condition_number: cond,
        ill_conditioned: cond > ILL_CONDITIONED,
        iterations: iters,
        converged,
    })
}

/// Unpenalized least squares on a fixed support.
pub fn refit_unpenalized(fam: MeasurementFamily, support: &[f64], y: &SampleVector) -> Result<DiscreteMeasure> {
    if support.is_empty() {
        return Ok(DiscreteMeasure::empty(fam.domain()));
    }
    let a = design(fam, support)?;
    let yv = nalgebra::DVector::from_column_slice(&y.values);
    let x = a
        .svd(true, true)
        .solve(&yv, 1e-14)
        .map_err(|e| Error::Numerical {
            message: format!("least-squares refit failed: {e}"),
            last_gap: None,
        })?;
    let w: Vec<Complex64> = x.iter().copied().collect();
    DiscreteMeasure::from_complex(fam.domain(), support, &w, AMPLITUDE_DROP)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimalityReport {
    /// Certified upper bound on `‖⟨c(Δ̂) − y, Φ⟩‖∞`.
    pub cond1_value: f64,
    /// Grid lower bound on the same quantity.
    pub cond1_lower: f64,
    /// `|⟨y − c, c⟩ − λ‖Δ̂‖_TV| / (λ‖Δ̂‖_TV)`, zero when `Δ̂ = 0`.
    pub cond2_residual: f64,
    pub lambda: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Both first-order optimality conditions of a candidate measure.
pub fn check_optimality(
    fam: MeasurementFamily,
    mu: &DiscreteMeasure,
    y: &SampleVector,
    lambda: f64,
    tol: f64,
) -> Result<OptimalityReport> {
    let c = forward(mu, fam)?;
    let resid = c.sub(y)?;
    let p = GeneralizedPolynomial::new(fam, resid.values.clone())?;
    let sup = sup_norm_refined(&p, 16 * fam.size(), tol / 10.0, 400_000)?;
    let tv = tv_norm(mu);
    let cond2 = if tv == 0.0 {
        0.0
    } else {
        let lhs = inner(&y.sub(&c)?.values, &c.values);
        (lhs - Complex64::new(lambda * tv, 0.0)).norm() / (lambda * tv)
    };
    Ok(OptimalityReport {
        cond1_value: sup.upper,
        cond1_lower: sup.lower,
        cond2_residual: cond2,
        lambda,
        tol,
        passed: sup.upper <= lambda * (1.0 + tol) && cond2 <= tol,
    })
}

/// `½‖c(μ) − y‖² + λ‖μ‖_TV`.
pub fn blasso_objective(fam: MeasurementFamily, mu: &DiscreteMeasure, y: &SampleVector, lambda: f64) -> Result<f64> {
    let r = forward(mu, fam)?.sub(y)?;
    Ok(0.5 * norm2(&r.values).powi(2) + lambda * tv_norm(mu))
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub measure: DiscreteMeasure,
    pub dual_coefficients: GeneralizedPolynomial,
    pub objective: f64,
    pub dual_objective: f64,
    /// `objective − dual_objective`.
    pub gap: f64,
    pub optimality: OptimalityReport,
    pub feasibility_slack: f64,
    /// The smallest level at which both the returned dual (`λ(1 + slack)`)
    /// and the residual of the returned primal (the certified
    /// `‖⟨y − c, Φ⟩‖∞`) are feasible.
    pub lambda_effective: f64,
    pub dual_sup: SupBound,
    pub condition_number: f64,
    pub ill_conditioned: bool,
    /// `|support| ≤ size + 1`.
    pub cardinality_ok: bool,
    pub refit: Option<DiscreteMeasure>,
    pub rounds: usize,
}

struct Candidate {
    measure: DiscreteMeasure,
    condition_number: f64,
    optimality: OptimalityReport,
    objective: f64,
}

impl Candidate {
    fn new(fam: MeasurementFamily, measure: DiscreteMeasure, cond: f64, y: &SampleVector, cfg: &SolverConfig) -> Result<Self> {
        Ok(Self {
            optimality: check_optimality(fam, &measure, y, cfg.lambda, cfg.optimality_tol)?,
            objective: blasso_objective(fam, &measure, y, cfg.lambda)?,
            condition_number: cond,
            measure,
        })
    }

    fn beats(&self, other: &Self) -> bool {
        match (self.optimality.passed, other.optimality.passed) {
            (true, false) => true,
            (false, true) => false,
            _ => self.objective < other.objective,
        }
    }
}

/// Solves the BLASSO. Two primal candidates are compared: amplitudes fitted
/// on the support read off `P̂`, and the atoms of the dual solver itself
/// (whose residual is exactly `λP̂`). The one passing the optimality check
/// with the lower objective is returned.
pub fn solve(fam: MeasurementFamily, y: &SampleVector, cfg: &SolverConfig) -> Result<SolveResult> {
    let dual = solve_dual(fam, y, cfg)?;
    let support = extract_support_seeded(&dual.coefficients, cfg, &dual.active_set);
    let fit = fit_amplitudes(fam, &support, y, cfg.lambda)?;
    let mut best = Candidate::new(fam, fit.measure, fit.condition_number, y, cfg)?;
    if let Ok(mu) = DiscreteMeasure::from_complex(fam.domain(), &dual.active_set, &dual.active_weights, AMPLITUDE_DROP) {
        let cond = if mu.is_empty() {
            1.0
        } else {
            condition_number(&design(fam, &mu.locations())?)
        };
        let slid = Candidate::new(fam, mu, cond, y, cfg)?;
        if slid.beats(&best) {
            best = slid;
        }
    }
    let refit = if cfg.unpenalized_refit {
        Some(refit_unpenalized(fam, &best.measure.locations(), y)?)
    } else {
        None
    };
    Ok(SolveResult {
        cardinality_ok: best.measure.len() <= fam.size() + 1,
        objective: best.objective,
        dual_objective: dual.dual_objective,
        gap: best.objective - dual.dual_objective,
        optimality: best.optimality,
        feasibility_slack: dual.feasibility_slack,
        lambda_effective: (cfg.lambda * (1.0 + dual.feasibility_slack)).max(best.optimality.cond1_value),
        dual_sup: dual.sup,
        condition_number: best.condition_number,
        ill_conditioned: best.condition_number > ILL_CONDITIONED,
        refit,
        rounds: dual.rounds,
        dual_coefficients: dual.coefficients,
        measure: best.measure,
    })
}

#[cfg(test)]
mod tests;
