//! Seeded end-to-end experiments: simulate, calibrate λ, solve, certify and
//! evaluate the localization guarantees on every trial, then persist a
//! self-describing run directory.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificate::{
    construct_fourier_certificate_with, verify_qic, CertificateOptions, CertificateReport, QicConstants, FOURIER_QIC,
    POINTS_PER_RESOLUTION,
};
use crate::error::{Error, Result};
use crate::family::{forward, GeneralizedPolynomial, MeasurementFamily, SampleVector};
use crate::guarantees::{
    bregman_diagnostic, fourier_guarantees, input_detection, moment_c_prime, moment_guarantees, output_localization,
    prediction_bound, BregmanReport, DetectionRecord, FourierCorollary, GuaranteeConstants, LocalizationBound,
    MomentCorollary, PredictionCheck,
};
use crate::io::{self, fmt_f64};
use crate::measure::{nearest, tv_norm, DiscreteMeasure, Domain};
use crate::noise::{
    calibration_table, lambda_fourier, lambda_moment, noise_sup, sample_noise, CalibrationRow, NoiseModel,
};
use crate::solver::{solve, OptimalityReport, SolveResult, SolverConfig};

pub const FORMAT_TAG: &str = "spikesolve-run/1";

/// Fraction of `‖c(truth)‖₂` used for λ when there is no noise to calibrate
/// against.
pub const NOISELESS_LAMBDA_FRACTION: f64 = 1e-3;

pub const SCENARIOS: &[&str] = &[
    "five-spikes-fourier",
    "five-spikes-fourier-128",
    "single-spike-fourier",
    "chebyshev-decay",
    "chebyshev-decay-64",
    "calibration-sweep",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum LambdaRule {
    /// `λ_F` for Fourier, `λ_M` for Chebyshev; without noise, a small
    /// fraction of the clean sample norm.
    Auto,
    Explicit { value: f64 },
    /// A multiple of `λ_F` or `λ_M`.
    Calibrated { multiple: f64 },
    /// A fraction of `‖c(truth)‖₂`.
    SampleNorm { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum TruthSpec {
    Inline { measure: DiscreteMeasure },
    /// A `measure.json` file.
    File { path: PathBuf },
}

impl TruthSpec {
    pub fn load(&self) -> Result<DiscreteMeasure> {
        match self {
            Self::Inline { measure } => Ok(measure.clone()),
            Self::File { path } => io::read_json(path)
                .map_err(|e| Error::Config(format!("cannot read truth from {}: {e}", path.display()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum GuaranteeSource {
    /// The Fourier isolation constants with `C_c = π²`.
    FourierDefault,
    /// User constants. Without `C_c`, Fourier uses `π²` and Chebyshev the
    /// moment-family value `4/(1 − c0²)`.
    Explicit {
        #[serde(rename = "C_a")]
        c_a: f64,
        #[serde(rename = "C_b")]
        c_b: f64,
        #[serde(rename = "C_c", default, skip_serializing_if = "Option::is_none")]
        c_c: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Per-component standard deviation (real and imaginary parts for
    /// Fourier).
    pub sigma: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { sigma: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// Dual grid nodes per family function.
    pub dual_grid_factor: usize,
    pub max_iters: usize,
    pub primal_dual_gap_tol: f64,
    pub delta_sup: f64,
    /// Relative to the domain length.
    pub refine_tol: f64,
    pub optimality_tol: f64,
    pub unpenalized_refit: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            dual_grid_factor: 8,
            max_iters: 200,
            primal_dual_gap_tol: 1e-10,
            delta_sup: 1e-3,
            refine_tol: 1e-6,
            optimality_tol: 1e-5,
            unpenalized_refit: false,
        }
    }
}

impl SolverSettings {
    pub fn to_config(&self, fam: MeasurementFamily, lambda: f64) -> SolverConfig {
        SolverConfig {
            lambda,
            dual_grid: self.dual_grid_factor * fam.size(),
            max_iters: self.max_iters,
            primal_dual_gap_tol: self.primal_dual_gap_tol,
            delta_sup: self.delta_sup,
            refine_tol: self.refine_tol * fam.domain().length(),
            optimality_tol: self.optimality_tol,
            unpenalized_refit: self.unpenalized_refit,
        }
    }
}

/// One Monte Carlo calibration case of a sweep. Levels are multiples of the
/// family's λ rule at the configured noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub family: MeasurementFamily,
    pub u_multiples: Vec<f64>,
    pub grid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub family: MeasurementFamily,
    pub truth: TruthSpec,
    pub noise: NoiseSpec,
    pub lambda: LambdaRule,
    /// Solve trials, or Monte Carlo trials per case in a sweep.
    pub trials: usize,
    pub seed: u64,
    pub solver: SolverSettings,
    pub guarantees: GuaranteeSource,
    /// Non-empty only for calibration sweeps, which skip the solve pipeline.
    pub calibration: Vec<CalibrationSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        builtin("five-spikes-fourier").expect("built-in scenario")
    }
}

fn inline(domain: Domain, atoms: &[(f64, f64, f64)]) -> TruthSpec {
    TruthSpec::Inline {
        measure: DiscreteMeasure::new(domain, atoms.iter().copied()).expect("valid built-in truth"),
    }
}

fn five_spikes(fc: usize) -> ExperimentConfig {
    // separation 0.16 ≥ 3/f_c for both cut-offs; the two lightest spikes sit
    // below the detection threshold at σ = 1
    let atoms = [
        (0.12, 6.0e4, 0.3),
        (0.31, 3.5e4, 2.1),
        (0.47, 2.0e4, 4.0),
        (0.68, 5.0e3, 1.2),
        (0.86, 8.0e2, 5.5),
    ];
    ExperimentConfig {
        scenario: if fc == 64 {
            "five-spikes-fourier".into()
        } else {
            format!("five-spikes-fourier-{fc}")
        },
        family: MeasurementFamily::Fourier { fc },
        truth: inline(Domain::Circle, &atoms),
        noise: NoiseSpec { sigma: 1.0 },
        lambda: LambdaRule::Auto,
        trials: 50,
        seed: 20_250_601,
        solver: SolverSettings::default(),
        guarantees: GuaranteeSource::FourierDefault,
        calibration: Vec::new(),
    }
}

fn chebyshev_decay(m: usize) -> ExperimentConfig {
    ExperimentConfig {
        scenario: if m == 16 {
            "chebyshev-decay".into()
        } else {
            format!("chebyshev-decay-{m}")
        },
        family: MeasurementFamily::Chebyshev { degree: m },
        // c0 = 0.2 keeps the admissible support inside [-0.6, 0.6]
        truth: inline(Domain::Interval, &[(-0.5, 2.0e4, 0.0), (0.0, 6.0e3, PI), (0.45, 1.8e3, 0.0)]),
        noise: NoiseSpec { sigma: 1.0 },
        lambda: LambdaRule::Auto,
        trials: 20,
        seed: 20_250_602,
        solver: SolverSettings::default(),
        guarantees: GuaranteeSource::Explicit {
            c_a: 0.5,
            c_b: 0.02,
            c_c: None,
        },
        calibration: Vec::new(),
    }
}

/// A named scenario. `five-spikes-fourier` and `chebyshev-decay` also accept
/// a `-64`/`-128` or `-16`/`-64` suffix.
pub fn builtin(name: &str) -> Result<ExperimentConfig> {
    let cfg = match name {
        "five-spikes-fourier" | "five-spikes-fourier-64" => five_spikes(64),
        "five-spikes-fourier-128" => five_spikes(128),
        "single-spike-fourier" => ExperimentConfig {
            scenario: name.into(),
            family: MeasurementFamily::Fourier { fc: 128 },
            truth: inline(Domain::Circle, &[(0.3, 5.0e4, 1.0)]),
            trials: 20,
            seed: 20_250_603,
            ..five_spikes(128)
        },
        "chebyshev-decay" | "chebyshev-decay-16" => chebyshev_decay(16),
        "chebyshev-decay-64" => chebyshev_decay(64),
        "calibration-sweep" => {
            let mult = vec![0.5, 0.625, 0.75, 0.875, 1.0];
            let case = |family| CalibrationSpec {
                family,
                u_multiples: mult.clone(),
                grid: 8192,
            };
            ExperimentConfig {
                scenario: name.into(),
                trials: 2000,
                seed: 20_250_604,
                calibration: vec![
                    case(MeasurementFamily::Fourier { fc: 16 }),
                    case(MeasurementFamily::Fourier { fc: 64 }),
                    case(MeasurementFamily::Chebyshev { degree: 16 }),
                    case(MeasurementFamily::Chebyshev { degree: 64 }),
                ],
                ..five_spikes(64)
            }
        }
        _ => {
            return Err(Error::Config(format!(
                "unknown scenario {name:?}; built-ins are {}",
                SCENARIOS.join(", ")
            )))
        }
    };
    Ok(cfg)
}

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let fam = self.family;
        match fam {
            MeasurementFamily::Fourier { fc } if fc < 1 => return config_err("f_c must be at least 1"),
            MeasurementFamily::Chebyshev { degree } if degree < 1 => return config_err("degree must be at least 1"),
            _ => {}
        }
        if self.trials == 0 {
            return config_err("trials must be at least 1");
        }
        let sigma = self.noise.sigma;
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return config_err(format!("σ must be finite and nonnegative, got {sigma}"));
        }
        match self.lambda {
            LambdaRule::Auto => {}
            LambdaRule::Explicit { value: v }
            | LambdaRule::Calibrated { multiple: v }
            | LambdaRule::SampleNorm { fraction: v } => {
                if !(v > 0.0 && v.is_finite()) {
                    return config_err(format!("λ rule parameter must be positive, got {v}"));
                }
            }
        }
        if matches!(self.lambda, LambdaRule::Calibrated { .. }) && sigma == 0.0 {
            return config_err("a calibrated λ needs σ > 0");
        }
        let s = &self.solver;
        if s.dual_grid_factor < 8 {
            return config_err("dual_grid_factor must be at least 8");
        }
        self.solver.to_config(fam, 1.0).validate(fam)?;
        if let GuaranteeSource::Explicit { c_a, c_b, c_c } = self.guarantees {
            QicConstants::new(c_a, c_b).map_err(|e| Error::Config(e.to_string()))?;
            if c_c.is_some_and(|c| !(c > 0.0)) {
                return config_err("C_c must be positive");
            }
        } else if !matches!(fam, MeasurementFamily::Fourier { .. }) {
            return config_err("fourier-default constants need the Fourier family");
        }
        if !self.calibration.is_empty() {
            if self.trials < 100 {
                return config_err("a calibration sweep needs at least 100 trials");
            }
            if sigma == 0.0 {
                return config_err("a calibration sweep needs σ > 0");
            }
            for c in &self.calibration {
                if c.grid < 8 * c.family.size() {
                    return config_err(format!("calibration grid {} is below 8 × family size", c.grid));
                }
                if c.u_multiples.is_empty() || c.u_multiples.iter().any(|u| !(*u > 0.0)) {
                    return config_err("calibration levels must be positive");
                }
                calibrated_lambda(c.family, sigma).map_err(|e| Error::Config(e.to_string()))?;
            }
            return Ok(());
        }
        let truth = self.truth.load()?;
        if truth.domain() != fam.domain() {
            return config_err(format!(
                "truth lives on {:?} but the family is defined on {:?}",
                truth.domain(),
                fam.domain()
            ));
        }
        self.lambda_for(&truth).map(|_| ())
    }

    /// The λ used by every trial.
    pub fn lambda_for(&self, truth: &DiscreteMeasure) -> Result<f64> {
        let fam = self.family;
        let sigma = self.noise.sigma;
        let clean_norm = || -> Result<f64> { Ok(forward(truth, fam)?.norm2()) };
        let lambda = match self.lambda {
            LambdaRule::Explicit { value } => value,
            LambdaRule::Auto if sigma > 0.0 => {
                calibrated_lambda(fam, sigma).map_err(|e| Error::Config(e.to_string()))?
            }
            LambdaRule::Auto => NOISELESS_LAMBDA_FRACTION * clean_norm()?,
            LambdaRule::Calibrated { multiple } => {
                multiple * calibrated_lambda(fam, sigma).map_err(|e| Error::Config(e.to_string()))?
            }
            LambdaRule::SampleNorm { fraction } => fraction * clean_norm()?,
        };
        if !(lambda > 0.0 && lambda.is_finite()) {
            return config_err(format!("the λ rule gives {lambda}; an empty truth needs an explicit λ"));
        }
        Ok(lambda)
    }
}

/// `λ_F` or `λ_M`.
pub fn calibrated_lambda(fam: MeasurementFamily, sigma: f64) -> Result<f64> {
    match fam {
        MeasurementFamily::Fourier { fc } => lambda_fourier(fc, sigma),
        MeasurementFamily::Chebyshev { degree } => lambda_moment(degree, sigma),
    }
}

/// Serializable digest of a [`SolveResult`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveSummary {
    pub lambda: f64,
    pub lambda_effective: f64,
    pub objective: f64,
    pub dual_objective: f64,
    pub gap: f64,
    pub feasibility_slack: f64,
    pub dual_sup_lower: f64,
    pub dual_sup_upper: f64,
    pub optimality: OptimalityReport,
    pub atoms: usize,
    pub tv: f64,
    pub condition_number: f64,
    pub ill_conditioned: bool,
    pub cardinality_ok: bool,
    pub rounds: usize,
    pub measure: DiscreteMeasure,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refit: Option<DiscreteMeasure>,
}

impl SolveSummary {
    pub fn new(res: &SolveResult, lambda: f64) -> Self {
        Self {
            lambda,
            lambda_effective: res.lambda_effective,
            objective: res.objective,
            dual_objective: res.dual_objective,
            gap: res.gap,
            feasibility_slack: res.feasibility_slack,
            dual_sup_lower: res.dual_sup.lower,
            dual_sup_upper: res.dual_sup.upper,
            optimality: res.optimality,
            atoms: res.measure.len(),
            tv: tv_norm(&res.measure),
            condition_number: res.condition_number,
            ill_conditioned: res.ill_conditioned,
            cardinality_ok: res.cardinality_ok,
            rounds: res.rounds,
            measure: res.measure.clone(),
            refit: res.refit.clone(),
        }
    }
}

/// Output-amplitude localization on one trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizationOutcome {
    /// `‖ε‖₂ ≤ λ`.
    pub conditioned: bool,
    pub localization: LocalizationBound,
    pub containment_violations: usize,
    pub uniqueness_violations: usize,
    pub near_mass_violated: bool,
    pub far_mass_violated: bool,
    pub holds: bool,
}

impl LocalizationOutcome {
    fn new(conditioned: bool, loc: LocalizationBound) -> Self {
        let containment = loc.spikes.iter().filter(|s| s.contained == Some(false)).count();
        let uniqueness = if loc.uniqueness_guaranteed == Some(true) {
            loc.spikes.iter().filter(|s| s.unique == Some(false)).count()
        } else {
            0
        };
        let near = loc.near_mass_moment.is_some_and(|v| v > loc.near_mass_bound);
        let far = loc.far_mass.is_some_and(|v| v > loc.far_mass_bound);
        Self {
            conditioned,
            holds: containment == 0 && uniqueness == 0 && !near && !far,
            containment_violations: containment,
            uniqueness_violations: uniqueness,
            near_mass_violated: near,
            far_mass_violated: far,
            localization: loc,
        }
    }
}

/// Input-amplitude detection on one trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionOutcome {
    /// Certified `‖⟨ε, Φ⟩‖∞ ≤ λ`.
    pub conditioned: bool,
    pub spikes: Vec<DetectionRecord>,
    pub discrepancy_violations: usize,
    pub detection_violations: usize,
    pub holds: bool,
}

impl DetectionOutcome {
    fn new(conditioned: bool, spikes: Vec<DetectionRecord>) -> Self {
        let disc = spikes.iter().filter(|d| !d.discrepancy_ok).count();
        let det = spikes.iter().filter(|d| d.detected == Some(false)).count();
        Self {
            conditioned,
            holds: disc == 0 && det == 0,
            discrepancy_violations: disc,
            detection_violations: det,
            spikes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BregmanOutcome {
    /// Same event as the localization check.
    pub conditioned: bool,
    #[serde(flatten)]
    pub report: BregmanReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub lambda: f64,
    /// `‖ε‖₂`.
    pub noise_l2: f64,
    /// Certified bracket on `λ₀ = ‖⟨ε, Φ⟩‖∞`.
    pub lambda0_lower: f64,
    pub lambda0_upper: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_kind: Option<String>,
    pub solve: Option<SolveSummary>,
    pub constants: Option<GuaranteeConstants>,
    pub localization: Option<LocalizationOutcome>,
    pub detection: Option<DetectionOutcome>,
    pub bregman: Option<BregmanOutcome>,
    pub prediction: Option<PredictionCheck>,
    #[serde(skip)]
    pub dual: Option<GeneralizedPolynomial>,
}

impl TrialRecord {
    fn fail(&mut self, e: Error) {
        let kind = match &e {
            Error::Numerical { .. } => "numerical",
            Error::Precondition(_) => "precondition",
            Error::Domain(_) => "domain",
            Error::Config(_) => "config",
            Error::Io(_) | Error::Json(_) => "io",
        };
        self.error_kind = Some(kind.into());
        self.error = Some(e.to_string());
    }

    /// Some theorem check failed on a trial meeting its noise hypothesis.
    pub fn conditioned_violation(&self) -> bool {
        self.localization.as_ref().is_some_and(|o| o.conditioned && !o.holds)
            || self.detection.as_ref().is_some_and(|o| o.conditioned && !o.holds)
            || self
                .bregman
                .as_ref()
                .is_some_and(|o| o.conditioned && !o.report.within_bound)
    }
}

/// Hypotheses shared by every trial: a verified certificate for the truth.
#[derive(Debug, Clone, Serialize)]
pub struct Hypotheses {
    pub certificate_verified: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<CertificateReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Corollary {
    Fourier(FourierCorollary),
    Moment(MomentCorollary),
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationCaseRecord {
    pub label: String,
    pub family: MeasurementFamily,
    pub sigma: f64,
    pub grid: usize,
    pub rows: Vec<CalibrationRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub trials: usize,
    pub failed_trials: usize,
    pub numerical_failures: usize,
    pub optimality_passed: usize,
    pub prediction_ok: usize,
    pub localization_conditioned: usize,
    pub localization_violating: usize,
    pub localization_pass_rate: Option<f64>,
    pub detection_conditioned: usize,
    pub detection_violating: usize,
    pub detection_pass_rate: Option<f64>,
    pub bregman_conditioned: usize,
    pub bregman_violating: usize,
    pub bregman_pass_rate: Option<f64>,
    /// Theorem checks were backed by a verified certificate.
    pub hypotheses_verified: bool,
    /// A verified-hypothesis, noise-conditioned trial broke a bound.
    pub guarantee_violation: bool,
    pub calibration_violations: usize,
}

/// Recount of the aggregate fields from per-trial rows.
pub fn aggregate(trials: &[TrialRecord], hyp_ok: bool, calibration: &[CalibrationCaseRecord]) -> Aggregate {
    let rate = |cond: usize, bad: usize| (cond > 0).then(|| (cond - bad) as f64 / cond as f64);
    let count = |f: &dyn Fn(&TrialRecord) -> bool| trials.iter().filter(|t| f(t)).count();
    let loc_c = count(&|t| t.localization.as_ref().is_some_and(|o| o.conditioned));
    let loc_v = count(&|t| t.localization.as_ref().is_some_and(|o| o.conditioned && !o.holds));
    let det_c = count(&|t| t.detection.as_ref().is_some_and(|o| o.conditioned));
    let det_v = count(&|t| t.detection.as_ref().is_some_and(|o| o.conditioned && !o.holds));
    let br_c = count(&|t| t.bregman.as_ref().is_some_and(|o| o.conditioned));
    let br_v = count(&|t| t.bregman.as_ref().is_some_and(|o| o.conditioned && !o.report.within_bound));
    Aggregate {
        trials: trials.len(),
        failed_trials: count(&|t| t.error.is_some()),
        numerical_failures: count(&|t| t.error_kind.as_deref() == Some("numerical")),
        optimality_passed: count(&|t| t.solve.as_ref().is_some_and(|s| s.optimality.passed)),
        prediction_ok: count(&|t| t.prediction.is_some_and(|p| p.slack >= 0.0)),
        localization_conditioned: loc_c,
        localization_violating: loc_v,
        localization_pass_rate: rate(loc_c, loc_v),
        detection_conditioned: det_c,
        detection_violating: det_v,
        detection_pass_rate: rate(det_c, det_v),
        bregman_conditioned: br_c,
        bregman_violating: br_v,
        bregman_pass_rate: rate(br_c, br_v),
        hypotheses_verified: hyp_ok,
        guarantee_violation: hyp_ok && trials.iter().any(TrialRecord::conditioned_violation),
        calibration_violations: calibration
            .iter()
            .flat_map(|c| &c.rows)
            .filter(|r| r.mc_exceedance > r.analytic_bound + 0.5 * (r.mc_high - r.mc_low))
            .count(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub format: &'static str,
    pub config: ExperimentConfig,
    pub lambda: Option<f64>,
    pub truth: Option<DiscreteMeasure>,
    pub hypotheses: Option<Hypotheses>,
    pub corollary: Option<Corollary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corollary_error: Option<String>,
    pub trials: Vec<TrialRecord>,
    pub calibration: Vec<CalibrationCaseRecord>,
    pub aggregate: Aggregate,
    /// Files of the run directory, relative to it.
    pub artifacts: Vec<String>,
}

fn base_constants(cfg: &ExperimentConfig, lambda: f64) -> Result<GuaranteeConstants> {
    let fam = cfg.family;
    let m = fam.effective_m();
    match (cfg.guarantees.clone(), fam) {
        (GuaranteeSource::FourierDefault, MeasurementFamily::Fourier { .. }) => {
            GuaranteeConstants::new(FOURIER_QIC, PI * PI, m, lambda)
        }
        (GuaranteeSource::FourierDefault, _) => config_err("fourier-default constants need the Fourier family"),
        (GuaranteeSource::Explicit { c_a, c_b, c_c }, MeasurementFamily::Fourier { .. }) => {
            GuaranteeConstants::new(QicConstants::new(c_a, c_b)?, c_c.unwrap_or(PI * PI), m, lambda)
        }
        (GuaranteeSource::Explicit { c_a, c_b, c_c }, MeasurementFamily::Chebyshev { .. }) => {
            let qic = QicConstants::new(c_a, c_b)?;
            let c0 = qic.c0();
            match c_c {
                Some(c) => GuaranteeConstants::new(qic, c, m, lambda),
                None => {
                    let mut k = GuaranteeConstants::new(qic, 4.0 / (1.0 - c0 * c0), m, lambda)?;
                    k.c_prime = moment_c_prime(qic)?;
                    Ok(k)
                }
            }
        }
    }
}

fn certify_truth(fam: MeasurementFamily, truth: &DiscreteMeasure, qic: QicConstants) -> (Hypotheses, Option<GeneralizedPolynomial>) {
    let MeasurementFamily::Fourier { fc } = fam else {
        return (
            Hypotheses {
                certificate_verified: false,
                certificate: None,
                reason: Some("no certificate construction for the Chebyshev family".into()),
            },
            None,
        );
    };
    if truth.is_empty() {
        return (
            Hypotheses {
                certificate_verified: false,
                certificate: None,
                reason: Some("empty truth".into()),
            },
            None,
        );
    }
    let support = truth.locations();
    let phases: Vec<f64> = truth.atoms().iter().map(|a| a.phase).collect();
    let opts = CertificateOptions {
        require_large_cutoff: false,
    };
    let built = construct_fourier_certificate_with(&support, &phases, fc, opts).and_then(|p| {
        let grid = (POINTS_PER_RESOLUTION * 2 * fc).max(16 * fam.size());
        verify_qic(&p, &support, &phases, qic, grid).map(|r| (p, r))
    });
    match built {
        Ok((p, report)) => (
            Hypotheses {
                certificate_verified: report.passed,
                reason: (!report.passed).then(|| "certificate fails the isolation check".into()),
                certificate: Some(report),
            },
            Some(p),
        ),
        Err(e) => (
            Hypotheses {
                certificate_verified: false,
                certificate: None,
                reason: Some(e.to_string()),
            },
            None,
        ),
    }
}

struct Shared<'a> {
    cfg: &'a ExperimentConfig,
    truth: &'a DiscreteMeasure,
    clean: SampleVector,
    lambda: f64,
    constants: GuaranteeConstants,
    certificate: Option<&'a GeneralizedPolynomial>,
    /// Theorem checks are backed by verified hypotheses; otherwise the
    /// outcomes are reported as unconditioned.
    backed: bool,
}

fn run_trial(sh: &Shared, trial: usize) -> TrialRecord {
    let cfg = sh.cfg;
    let fam = cfg.family;
    let model = NoiseModel::for_family(fam, cfg.noise.sigma, cfg.seed).map(|m| m.substream(trial as u64));
    let mut rec = TrialRecord {
        trial,
        seed: cfg.seed ^ trial as u64,
        lambda: sh.lambda,
        noise_l2: f64::NAN,
        lambda0_lower: f64::NAN,
        lambda0_upper: f64::NAN,
        error: None,
        error_kind: None,
        solve: None,
        constants: None,
        localization: None,
        detection: None,
        bregman: None,
        prediction: None,
        dual: None,
    };
    if let Err(e) = trial_body(sh, model, &mut rec) {
        rec.fail(e);
    }
    rec
}

fn trial_body(sh: &Shared, model: Result<NoiseModel>, rec: &mut TrialRecord) -> Result<()> {
    let fam = sh.cfg.family;
    let eps = sample_noise(&model?, fam)?;
    let y = sh.clean.add(&eps)?;
    rec.noise_l2 = eps.norm2();
    let l0 = noise_sup(&eps)?;
    rec.lambda0_lower = l0.lower;
    rec.lambda0_upper = l0.upper;

    let scfg = sh.cfg.solver.to_config(fam, sh.lambda);
    let res = solve(fam, &y, &scfg)?;
    rec.solve = Some(SolveSummary::new(&res, sh.lambda));
    rec.dual = Some(res.dual_coefficients.clone());

    let lam = res.lambda_effective;
    let k = sh.constants.with_lambda(lam);
    rec.constants = Some(k);
    let est = &res.measure;
    let loc = output_localization(est, Some(sh.truth), &k)?;
    rec.localization = Some(LocalizationOutcome::new(sh.backed && rec.noise_l2 <= sh.lambda, loc));
    let det = input_detection(sh.truth, est, &k)?;
    rec.detection = Some(DetectionOutcome::new(sh.backed && l0.upper <= sh.lambda, det));
    if let Some(p) = sh.certificate {
        let report = bregman_diagnostic(p, sh.truth, est, &k)?;
        rec.bregman = Some(BregmanOutcome {
            conditioned: sh.backed && rec.noise_l2 <= sh.lambda,
            report,
        });
    }
    rec.prediction = Some(prediction_bound(fam, est, sh.truth, lam, l0.upper)?);
    Ok(())
}

fn corollary(cfg: &ExperimentConfig, lambda: f64, truth: &DiscreteMeasure) -> Result<Corollary> {
    let sigma = cfg.noise.sigma;
    match (cfg.family, &cfg.guarantees) {
        (MeasurementFamily::Fourier { fc }, _) => fourier_guarantees(fc, sigma, lambda).map(Corollary::Fourier),
        (MeasurementFamily::Chebyshev { degree }, GuaranteeSource::Explicit { c_a, c_b, .. }) => {
            let qic = QicConstants::new(*c_a, *c_b)?;
            moment_guarantees(degree, sigma, lambda, qic, Some(&truth.locations())).map(Corollary::Moment)
        }
        _ => config_err("no corollary for this configuration"),
    }
}

fn family_label(fam: MeasurementFamily) -> String {
    match fam {
        MeasurementFamily::Fourier { fc } => format!("fourier-{fc}"),
        MeasurementFamily::Chebyshev { degree } => format!("chebyshev-{degree}"),
    }
}

fn run_calibration(cfg: &ExperimentConfig) -> Result<Vec<CalibrationCaseRecord>> {
    let sigma = cfg.noise.sigma;
    cfg.calibration
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let base = calibrated_lambda(c.family, sigma)?;
            let u: Vec<f64> = c.u_multiples.iter().map(|m| m * base).collect();
            let seed = cfg.seed.wrapping_add((i as u64) << 32);
            let model = NoiseModel::for_family(c.family, sigma, seed)?;
            Ok(CalibrationCaseRecord {
                label: family_label(c.family),
                family: c.family,
                sigma,
                grid: c.grid,
                rows: calibration_table(c.family, &model, &u, cfg.trials, c.grid)?,
            })
        })
        .collect()
}

/// Truth and noisy samples of one trial, as the pipeline sees them.
pub fn simulate(cfg: &ExperimentConfig, trial: usize) -> Result<(DiscreteMeasure, SampleVector)> {
    let truth = cfg.truth.load()?;
    let clean = forward(&truth, cfg.family).map_err(|e| Error::Config(e.to_string()))?;
    let model = NoiseModel::for_family(cfg.family, cfg.noise.sigma, cfg.seed)?.substream(trial as u64);
    let y = clean.add(&sample_noise(&model, cfg.family)?)?;
    Ok((truth, y))
}

/// Runs the configured pipeline without touching the filesystem. Stage
/// errors of single trials are recorded on the trial; configuration errors
/// abort.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunRecord> {
    cfg.validate()?;
    if !cfg.calibration.is_empty() {
        let calibration = run_calibration(cfg)?;
        let aggregate = aggregate(&[], false, &calibration);
        return Ok(RunRecord {
            format: FORMAT_TAG,
            config: cfg.clone(),
            lambda: None,
            truth: None,
            hypotheses: None,
            corollary: None,
            corollary_error: None,
            trials: Vec::new(),
            calibration,
            aggregate,
            artifacts: Vec::new(),
        });
    }
    let truth = cfg.truth.load()?;
    let lambda = cfg.lambda_for(&truth)?;
    let constants = base_constants(cfg, lambda).map_err(|e| Error::Config(e.to_string()))?;
    let (mut hyp, cert) = certify_truth(cfg.family, &truth, constants.qic);
    if let MeasurementFamily::Chebyshev { .. } = cfg.family {
        let c0 = constants.c0();
        if let Some(&bad) = truth.locations().iter().find(|&&t| 1.0 - t.abs() < 2.0 * c0) {
            hyp.reason = Some(format!("support point {bad} is closer than 2c0 to ±1"));
        }
    }
    let backed = hyp.certificate_verified;
    let sh = Shared {
        cfg,
        truth: &truth,
        clean: forward(&truth, cfg.family)?,
        lambda,
        constants,
        certificate: cert.as_ref().filter(|_| backed),
        backed,
    };
    let trials: Vec<TrialRecord> = (0..cfg.trials).into_par_iter().map(|t| run_trial(&sh, t)).collect();
    let (corollary, corollary_error) = match corollary(cfg, lambda, &truth) {
        Ok(c) => (Some(c), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let aggregate = aggregate(&trials, backed, &[]);
    Ok(RunRecord {
        format: FORMAT_TAG,
        config: cfg.clone(),
        lambda: Some(lambda),
        truth: Some(truth),
        hypotheses: Some(hyp),
        corollary,
        corollary_error,
        trials,
        calibration: Vec::new(),
        aggregate,
        artifacts: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotData {
    DualPoly,
    Spikes,
    Calibration,
}

/// Dual polynomial samples per family function in `dualpoly.csv`.
const DUALPOLY_OVERSAMPLING: usize = 16;

/// Writes a plot-ready CSV into `dir` and returns the paths written.
pub fn emit_plot_data(record: &RunRecord, which: PlotData, dir: &Path) -> Result<Vec<PathBuf>> {
    match which {
        PlotData::Calibration => {
            if record.calibration.is_empty() {
                return Err(Error::Domain("the run holds no calibration data".into()));
            }
            record
                .calibration
                .iter()
                .map(|c| {
                    let path = dir.join(format!("calibration_{}.csv", c.label));
                    io::write_calibration_csv(&path, &c.rows)?;
                    Ok(path)
                })
                .collect()
        }
        PlotData::DualPoly => {
            let t0 = record.trials.first().ok_or_else(|| Error::Domain("the run holds no trials".into()))?;
            let p = t0
                .dual
                .as_ref()
                .ok_or_else(|| Error::Domain("trial 0 has no dual polynomial".into()))?;
            let path = dir.join("dualpoly.csv");
            io::write_dualpoly_csv(&path, p, DUALPOLY_OVERSAMPLING * p.family.size())?;
            Ok(vec![path])
        }
        PlotData::Spikes => {
            let t0 = record.trials.first().ok_or_else(|| Error::Domain("the run holds no trials".into()))?;
            let (Some(truth), Some(sol)) = (&record.truth, &t0.solve) else {
                return Err(Error::Domain("trial 0 has no estimate".into()));
            };
            let path = dir.join("spikes_overlay.csv");
            fs::write(&path, overlay_csv(truth, &sol.measure))?;
            Ok(vec![path])
        }
    }
}

pub const OVERLAY_HEADER: &str =
    "truth_id,truth_location,truth_amplitude,estimate_id,estimate_location,estimate_amplitude,distance";

/// Truth and estimate side by side: each true spike with its nearest
/// estimate, then estimates nearest to no true spike.
pub fn overlay_csv(truth: &DiscreteMeasure, estimate: &DiscreteMeasure) -> String {
    let dom = truth.domain();
    let est = estimate.locations();
    let mut used = vec![false; est.len()];
    let mut s = String::from(OVERLAY_HEADER);
    s.push('\n');
    for (j, t) in truth.atoms().iter().enumerate() {
        let cells = match nearest(t.location, &est, dom) {
            Some((k, d)) => {
                used[k] = true;
                let a = estimate.atoms()[k];
                format!("{k},{},{},{}", fmt_f64(a.location), fmt_f64(a.amplitude), fmt_f64(d))
            }
            None => ",,,".into(),
        };
        s.push_str(&format!("{j},{},{},{cells}\n", fmt_f64(t.location), fmt_f64(t.amplitude)));
    }
    let locs = truth.locations();
    for (k, a) in estimate.atoms().iter().enumerate() {
        if used[k] {
            continue;
        }
        let d = nearest(a.location, &locs, dom).map(|n| fmt_f64(n.1)).unwrap_or_default();
        s.push_str(&format!(
            ",,,{k},{},{},{d}\n",
            fmt_f64(a.location),
            fmt_f64(a.amplitude)
        ));
    }
    s
}

const DETECTION_HEADER: &str =
    "spike_id,location,amplitude,clustered_mass,discrepancy,bound,radius,nearest_estimate_distance,detected";
const ESTIMATE_HEADER: &str = "atom_id,location,amplitude,phase";

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn write_trial_csvs(dir: &Path, t: &TrialRecord) -> Result<Vec<String>> {
    let mut out = Vec::new();
    if let Some(sol) = &t.solve {
        let name = format!("trial_{:04}_estimate.csv", t.trial);
        io::write_rows(
            &dir.join(&name),
            ESTIMATE_HEADER,
            sol.measure.atoms().iter().enumerate().map(|(k, a)| {
                vec![k.to_string(), fmt_f64(a.location), fmt_f64(a.amplitude), fmt_f64(a.phase)]
            }),
        )?;
        out.push(name);
    }
    if let Some(loc) = &t.localization {
        let name = format!("trial_{:04}_spikes.csv", t.trial);
        io::write_spikes_csv(&dir.join(&name), &loc.localization.spikes)?;
        out.push(name);
    }
    if let Some(det) = &t.detection {
        let name = format!("trial_{:04}_detection.csv", t.trial);
        io::write_rows(
            &dir.join(&name),
            DETECTION_HEADER,
            det.spikes.iter().map(|d| {
                vec![
                    d.spike_id.to_string(),
                    fmt_f64(d.location),
                    fmt_f64(d.amplitude),
                    fmt_f64(d.clustered_mass),
                    fmt_f64(d.discrepancy),
                    fmt_f64(d.bound),
                    opt(d.radius),
                    opt(d.nearest_estimate_distance),
                    d.detected.map(|b| b.to_string()).unwrap_or_default(),
                ]
            }),
        )?;
        out.push(name);
    }
    Ok(out)
}

#[derive(Serialize)]
struct GuaranteesFile<'a> {
    format: &'static str,
    lambda: Option<f64>,
    hypotheses_verified: bool,
    corollary: &'a Option<Corollary>,
    trials: Vec<GuaranteeRow<'a>>,
    localization_passed: bool,
    detection_passed: bool,
    bregman_passed: bool,
    guarantee_violation: bool,
}

#[derive(Serialize)]
struct GuaranteeRow<'a> {
    trial: usize,
    constants: &'a Option<GuaranteeConstants>,
    noise_l2: f64,
    lambda0_upper: f64,
    localization: &'a Option<LocalizationOutcome>,
    detection: &'a Option<DetectionOutcome>,
    bregman: &'a Option<BregmanOutcome>,
    prediction: &'a Option<PredictionCheck>,
}

/// [`execute`] followed by writing the run directory.
pub fn run_scenario(cfg: &ExperimentConfig, dir: &Path) -> Result<RunRecord> {
    let mut record = execute(cfg)?;
    persist(&mut record, dir)?;
    Ok(record)
}

/// Writes `config.json`, `results.json` and the per-trial and plot files.
pub fn persist(record: &mut RunRecord, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    io::write_json(&dir.join("config.json"), &record.config)?;
    let mut artifacts = vec!["config.json".to_string()];
    let rel = |paths: Vec<PathBuf>| -> Vec<String> {
        paths
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect()
    };
    if !record.calibration.is_empty() {
        artifacts.extend(rel(emit_plot_data(record, PlotData::Calibration, dir)?));
    }
    if !record.trials.is_empty() {
        for t in &record.trials {
            artifacts.extend(write_trial_csvs(dir, t)?);
        }
        if record.trials[0].dual.is_some() {
            artifacts.extend(rel(emit_plot_data(record, PlotData::DualPoly, dir)?));
            artifacts.extend(rel(emit_plot_data(record, PlotData::Spikes, dir)?));
        }
        if let Some(rep) = record.hypotheses.as_ref().and_then(|h| h.certificate.as_ref()) {
            io::write_json(&dir.join("certificate.json"), rep)?;
            artifacts.push("certificate.json".into());
        }
        let ag = &record.aggregate;
        let file = GuaranteesFile {
            format: FORMAT_TAG,
            lambda: record.lambda,
            hypotheses_verified: ag.hypotheses_verified,
            corollary: &record.corollary,
            trials: record
                .trials
                .iter()
                .map(|t| GuaranteeRow {
                    trial: t.trial,
                    constants: &t.constants,
                    noise_l2: t.noise_l2,
                    lambda0_upper: t.lambda0_upper,
                    localization: &t.localization,
                    detection: &t.detection,
                    bregman: &t.bregman,
                    prediction: &t.prediction,
                })
                .collect(),
            localization_passed: ag.localization_violating == 0,
            detection_passed: ag.detection_violating == 0,
            bregman_passed: ag.bregman_violating == 0,
            guarantee_violation: ag.guarantee_violation,
        };
        io::write_json(&dir.join("guarantees.json"), &file)?;
        artifacts.push("guarantees.json".into());
    }
    artifacts.push("results.json".into());
    record.artifacts = artifacts;
    io::write_json(&dir.join("results.json"), record)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_fourier(trials: usize, sigma: f64) -> ExperimentConfig {
        ExperimentConfig {
            scenario: "small".into(),
            family: MeasurementFamily::Fourier { fc: 16 },
            truth: inline(Domain::Circle, &[(0.2, 3.0e4, 0.5), (0.6, 2.0e4, 2.0)]),
            noise: NoiseSpec { sigma },
            trials,
            seed: 7,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn builtins_validate() {
        for name in SCENARIOS {
            builtin(name).unwrap().validate().unwrap();
        }
        assert!(matches!(builtin("nope"), Err(Error::Config(_))));
    }

    #[test]
    fn config_round_trips_with_defaults() {
        let cfg = builtin("chebyshev-decay-64").unwrap();
        let back: ExperimentConfig = serde_json::from_str(&io::to_json_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, back);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"trials": 3, "seed": 11}"#).unwrap();
        assert_eq!(partial.trials, 3);
        assert_eq!(partial.family, MeasurementFamily::Fourier { fc: 64 });
    }

    #[test]
    fn bad_configs_are_config_errors() {
        let mut cfg = small_fourier(1, 1.0);
        cfg.trials = 0;
        assert!(matches!(execute(&cfg), Err(Error::Config(_))));
        let mut cfg = small_fourier(1, 0.0);
        cfg.lambda = LambdaRule::Calibrated { multiple: 1.0 };
        assert!(matches!(execute(&cfg), Err(Error::Config(_))));
        let mut cfg = small_fourier(1, 1.0);
        cfg.family = MeasurementFamily::Chebyshev { degree: 16 };
        assert!(matches!(execute(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn noiseless_trial_recovers_truth() {
        let rec = execute(&small_fourier(1, 0.0)).unwrap();
        let t = &rec.trials[0];
        assert!(t.error.is_none(), "{:?}", t.error);
        let sol = t.solve.as_ref().unwrap();
        assert!(sol.optimality.passed);
        assert_eq!(sol.measure.len(), 2);
        for (a, b) in sol.measure.atoms().iter().zip(rec.truth.as_ref().unwrap().atoms()) {
            assert!((a.location - b.location).abs() < 1e-3 / 16.0);
        }
        assert_eq!(t.noise_l2, 0.0);
    }

    #[test]
    fn aggregate_matches_recount() {
        let rec = execute(&small_fourier(4, 1.0)).unwrap();
        let ag = &rec.aggregate;
        assert_eq!(ag.trials, 4);
        let cond = rec.trials.iter().filter(|t| t.localization.as_ref().unwrap().conditioned).count();
        assert_eq!(ag.localization_conditioned, cond);
        let again = aggregate(&rec.trials, ag.hypotheses_verified, &rec.calibration);
        assert_eq!(&again, ag);
        if let Some(r) = ag.localization_pass_rate {
            assert_eq!(r, (cond - ag.localization_violating) as f64 / cond as f64);
        }
    }

    #[test]
    fn runs_are_byte_identical() {
        let cfg = small_fourier(3, 1.0);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_scenario(&cfg, a.path()).unwrap();
        run_scenario(&cfg, b.path()).unwrap();
        for f in ["results.json", "config.json", "dualpoly.csv", "trial_0002_spikes.csv"] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn empty_run_has_no_plot_data() {
        let mut rec = execute(&small_fourier(1, 1.0)).unwrap();
        rec.trials.clear();
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_plot_data(&rec, PlotData::DualPoly, dir.path()).is_err());
        assert!(emit_plot_data(&rec, PlotData::Spikes, dir.path()).is_err());
        assert!(emit_plot_data(&rec, PlotData::Calibration, dir.path()).is_err());
    }

    #[test]
    fn overlay_aligns_truth_and_estimate() {
        let truth = DiscreteMeasure::new(Domain::Circle, [(0.3, 1.0, 0.0), (0.5, 2.0, 0.0)]).unwrap();
        let est = DiscreteMeasure::new(Domain::Circle, [(0.5001, 1.9, 0.0), (0.8, 0.1, 0.0)]).unwrap();
        let csv = overlay_csv(&truth, &est);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("1,") && lines[2].contains(",0,"));
        assert!(lines[3].starts_with(",,,1,"));
    }
}
