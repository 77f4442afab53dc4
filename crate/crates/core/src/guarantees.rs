//! Quantitative localization guarantees.
//!
//! Output-amplitude localization: recovered atoms heavier than `2λ/C_b` lie
//! within `√(2λ/(C_a Δ̂_k))/m` of the true support, with near-mass and
//! far-mass bounds. Input-amplitude detection: every true spike heavier than
//! `C′λ` is matched within `√(2λ/(C_a(Δ_j − C′λ)))/m`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::certificate::{QicConstants, FOURIER_MIN_CUTOFF, FOURIER_QIC, PHASE_TOL};
use crate::error::{domain_err, precondition_err, Result};
use crate::family::{forward, GeneralizedPolynomial, MeasurementFamily};
use crate::grid::sup_norm_refined;
use crate::measure::{min_separation, nearest, partition_near_far, DiscreteMeasure};
use crate::noise::{failure_probability, lambda_fourier, lambda_moment, CalibrationCase};

/// Corollary-form radius constant: `|x − T| ≤ √(λ/(0.1678|Δ̂|))/f_c`.
pub const FOURIER_RADIUS_CONSTANT: f64 = 0.1678;
/// Corollary-form maximum radius, in units of `1/f_c`.
pub const FOURIER_MAX_RADIUS: f64 = 0.1649;
/// Corollary-form detection threshold, in units of `λ`.
pub const FOURIER_DETECTION: f64 = 218.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GuaranteeConstants {
    #[serde(flatten)]
    pub qic: QicConstants,
    #[serde(rename = "C_c")]
    pub c_c: f64,
    #[serde(rename = "C_prime")]
    pub c_prime: f64,
    pub effective_m: usize,
    pub lambda: f64,
}

/// `2 + max{2(1 − C_b)/C_b, C_c/C_a}`.
pub fn general_c_prime(qic: QicConstants, c_c: f64) -> f64 {
    2.0 + (2.0 * (1.0 - qic.c_b) / qic.c_b).max(c_c / qic.c_a)
}

/// `2 + max{2(1 − C_b)/C_b, 4/(C_a − C_b)}`, the moment-family form.
pub fn moment_c_prime(qic: QicConstants) -> Result<f64> {
    if qic.c_a <= qic.c_b {
        return domain_err("the moment constant needs C_a > C_b");
    }
    Ok(2.0 + (2.0 * (1.0 - qic.c_b) / qic.c_b).max(4.0 / (qic.c_a - qic.c_b)))
}

impl GuaranteeConstants {
    /// Constants of the general case, with `C′` computed from its parts.
    pub fn new(qic: QicConstants, c_c: f64, effective_m: usize, lambda: f64) -> Result<Self> {
        if !(c_c > 0.0) || effective_m == 0 || !(lambda > 0.0) {
            return domain_err("need C_c > 0, m ≥ 1 and λ > 0");
        }
        Ok(Self {
            qic,
            c_c,
            c_prime: general_c_prime(qic, c_c),
            effective_m,
            lambda,
        })
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..*self }
    }

    pub fn c0(&self) -> f64 {
        self.qic.c0()
    }

    fn m(&self) -> f64 {
        self.effective_m as f64
    }

    /// `2λ/C_b`.
    pub fn output_threshold(&self) -> f64 {
        2.0 * self.lambda / self.qic.c_b
    }

    /// `C′λ`.
    pub fn detection_threshold(&self) -> f64 {
        self.c_prime * self.lambda
    }

    /// `c0/m`.
    pub fn max_radius(&self) -> f64 {
        self.c0() / self.m()
    }

    /// Confidence radius of a recovered atom, when it clears `2λ/C_b`.
    pub fn output_radius(&self, amplitude: f64) -> Option<f64> {
        (amplitude > self.output_threshold())
            .then(|| (2.0 * self.lambda / (self.qic.c_a * amplitude)).sqrt() / self.m())
    }

    /// Detection radius of a true spike, when it clears `C′λ`.
    pub fn input_radius(&self, amplitude: f64) -> Option<f64> {
        let excess = amplitude - self.detection_threshold();
        (excess > 0.0).then(|| (2.0 * self.lambda / (self.qic.c_a * excess)).sqrt() / self.m())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpikeRecord {
    pub spike_id: usize,
    pub location: f64,
    pub amplitude: f64,
    pub threshold: f64,
    pub threshold_passed: bool,
    pub radius: Option<f64>,
    pub nearest_truth: Option<usize>,
    pub nearest_truth_distance: Option<f64>,
    /// Some true spike lies within the radius.
    pub contained: Option<bool>,
    /// Exactly one true spike lies within the radius.
    pub unique: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizationBound {
    pub spikes: Vec<SpikeRecord>,
    /// `Σ_{T̂_k ∈ N} Δ̂_k min_l d(T̂_k, T_l)²`.
    pub near_mass_moment: Option<f64>,
    /// `2λ/(C_a m²)`.
    pub near_mass_bound: f64,
    /// `Σ_{T̂_k ∈ F} Δ̂_k`.
    pub far_mass: Option<f64>,
    /// `2λ/C_b`.
    pub far_mass_bound: f64,
    /// Separation of the truth exceeds `2c0/m`.
    pub uniqueness_guaranteed: Option<bool>,
    /// Every check that could be evaluated held.
    pub holds: Option<bool>,
}

/// Radii of the recovered atoms and, with a ground truth, containment and
/// both mass bounds.
pub fn output_localization(
    estimate: &DiscreteMeasure,
    truth: Option<&DiscreteMeasure>,
    consts: &GuaranteeConstants,
) -> Result<LocalizationBound> {
    let dom = estimate.domain();
    let m = consts.effective_m;
    let support: Option<Vec<f64>> = truth.map(|t| t.locations()).filter(|s| !s.is_empty());
    let mut spikes = Vec::with_capacity(estimate.len());
    for (k, a) in estimate.atoms().iter().enumerate() {
        let radius = consts.output_radius(a.amplitude);
        let near = support.as_ref().and_then(|s| nearest(a.location, s, dom));
        let (contained, unique) = match (&support, radius) {
            (Some(s), Some(r)) => {
                let inside = s.iter().filter(|&&t| dom.distance(a.location, t) <= r).count();
                (Some(inside > 0), Some(inside == 1))
            }
            _ => (None, None),
        };
        spikes.push(SpikeRecord {
            spike_id: k,
            location: a.location,
            amplitude: a.amplitude,
            threshold: consts.output_threshold(),
            threshold_passed: radius.is_some(),
            radius,
            nearest_truth: near.map(|n| n.0),
            nearest_truth_distance: near.map(|n| n.1),
            contained,
            unique,
        });
    }
    let near_bound = 2.0 * consts.lambda / (consts.qic.c_a * (m * m) as f64);
    let far_bound = consts.output_threshold();
    let (near_mass, far_mass, unique_ok) = match &support {
        Some(s) => {
            let pts = estimate.locations();
            let part = partition_near_far(&pts, s, consts.c0(), m, dom)?;
            let atoms = estimate.atoms();
            let near: f64 = part
                .near
                .iter()
                .map(|&i| atoms[i].amplitude * nearest(pts[i], s, dom).map_or(0.0, |n| n.1).powi(2))
                .sum();
            let far: f64 = part.far.iter().map(|&i| atoms[i].amplitude).sum();
            let sep_ok = if s.len() < 2 {
                true
            } else {
                min_separation(s, dom)? > 2.0 * consts.max_radius()
            };
            (Some(near), Some(far), Some(sep_ok))
        }
        None => (None, None, None),
    };
    let holds = support.as_ref().map(|_| {
        spikes.iter().all(|s| s.contained != Some(false))
            && near_mass.is_none_or(|v| v <= near_bound)
            && far_mass.is_none_or(|v| v <= far_bound)
            && (unique_ok != Some(true) || spikes.iter().all(|s| s.unique != Some(false)))
    });
    Ok(LocalizationBound {
        spikes,
        near_mass_moment: near_mass,
        near_mass_bound: near_bound,
        far_mass,
        far_mass_bound: far_bound,
        uniqueness_guaranteed: unique_ok,
        holds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionRecord {
    pub spike_id: usize,
    pub location: f64,
    pub amplitude: f64,
    /// Recovered mass within `c0/m`.
    pub clustered_mass: f64,
    /// `|Δ_j − clustered_mass|`.
    pub discrepancy: f64,
    /// `C′λ`.
    pub bound: f64,
    pub discrepancy_ok: bool,
    pub radius: Option<f64>,
    pub nearest_estimate_distance: Option<f64>,
    pub detected: Option<bool>,
}

/// Per-true-spike clustered mass and detection radius.
pub fn input_detection(
    truth: &DiscreteMeasure,
    estimate: &DiscreteMeasure,
    consts: &GuaranteeConstants,
) -> Result<Vec<DetectionRecord>> {
    let dom = truth.domain();
    let radius_c0 = consts.max_radius();
    let est = estimate.locations();
    Ok(truth
        .atoms()
        .iter()
        .enumerate()
        .map(|(j, t)| {
            let clustered: f64 = estimate
                .atoms()
                .iter()
                .filter(|a| dom.distance(a.location, t.location) <= radius_c0)
                .map(|a| a.amplitude)
                .sum();
            let discrepancy = (t.amplitude - clustered).abs();
            let radius = consts.input_radius(t.amplitude);
            let near = nearest(t.location, &est, dom).map(|n| n.1);
            DetectionRecord {
                spike_id: j,
                location: t.location,
                amplitude: t.amplitude,
                clustered_mass: clustered,
                discrepancy,
                bound: consts.detection_threshold(),
                discrepancy_ok: discrepancy <= consts.detection_threshold(),
                radius,
                nearest_estimate_distance: near,
                detected: radius.map(|r| near.is_some_and(|d| d <= r)),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FourierCorollary {
    pub constants: GuaranteeConstants,
    pub lambda_f: f64,
    /// `218λ`.
    pub detection_threshold: f64,
    pub radius_constant: f64,
    /// `0.1649/f_c`.
    pub corollary_max_radius: f64,
    /// `c0/m` from `(C_a, C_b)`.
    pub theorem_max_radius: f64,
    /// `|√(0.1678/(2C_a)) − 1|`: corollary radius against the theorem form.
    pub radius_consistency_residual: f64,
    pub failure_probability: f64,
}

impl FourierCorollary {
    /// `√(λ/(0.1678|Δ̂|))/f_c`, for `|Δ̂| ≥ 218λ`.
    pub fn corollary_radius(&self, amplitude: f64) -> Option<f64> {
        let fc = (self.constants.effective_m / 2) as f64;
        (amplitude >= self.detection_threshold)
            .then(|| (self.constants.lambda / (self.radius_constant * amplitude)).sqrt() / fc)
    }
}

pub fn fourier_guarantees(fc: usize, sigma: f64, lambda: f64) -> Result<FourierCorollary> {
    if fc < FOURIER_MIN_CUTOFF {
        return precondition_err(format!("f_c = {fc} is below {FOURIER_MIN_CUTOFF}"));
    }
    let lf = lambda_fourier(fc, sigma)?;
    if lambda < lf * (1.0 - 1e-12) {
        return precondition_err(format!("λ = {lambda} is below λ_F = {lf}"));
    }
    let constants = GuaranteeConstants::new(FOURIER_QIC, PI * PI, 2 * fc, lambda)?;
    let residual = ((FOURIER_RADIUS_CONSTANT / (2.0 * FOURIER_QIC.c_a)).sqrt() - 1.0).abs();
    Ok(FourierCorollary {
        constants,
        lambda_f: lf,
        detection_threshold: FOURIER_DETECTION * lambda,
        radius_constant: FOURIER_RADIUS_CONSTANT,
        corollary_max_radius: FOURIER_MAX_RADIUS / fc as f64,
        theorem_max_radius: constants.max_radius(),
        radius_consistency_residual: residual,
        failure_probability: failure_probability(CalibrationCase::Fourier { fc, sigma }, lambda)?,
    })
}

pub const MOMENT_FAILURE_FORMULA: &str =
    "8*sqrt(6)/sqrt(2*pi) * (lambda/lambda_M) * sqrt(log m) * exp(-(2*lambda^2/lambda_M^2 - 1) * log m)";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentCorollary {
    pub constants: GuaranteeConstants,
    pub lambda_m: f64,
    pub c0: f64,
    /// `2 + max{2(1 − C_b)/C_b, C_c/C_a}` for comparison with the stored `C′`.
    pub general_c_prime: f64,
    pub failure_probability: f64,
    pub failure_formula: &'static str,
}

/// Constants for Chebyshev moments of degree `m`. When a support is given,
/// it must stay `2c0` away from `±1`.
pub fn moment_guarantees(
    m: usize,
    sigma: f64,
    lambda: f64,
    qic: QicConstants,
    support: Option<&[f64]>,
) -> Result<MomentCorollary> {
    if m < 9 {
        return precondition_err(format!("m = {m} is below 9"));
    }
    let c0 = qic.c0();
    if qic.c_b / qic.c_a > c0 * c0 * (1.0 + 1e-12) {
        return precondition_err("C_b/C_a exceeds c0²");
    }
    if c0 >= 1.0 {
        return precondition_err(format!("c0 = {c0} leaves no admissible support"));
    }
    if let Some(s) = support {
        if let Some(&bad) = s.iter().find(|&&t| 1.0 - t.abs() < 2.0 * c0) {
            return precondition_err(format!("support point {bad} is closer than 2c0 = {} to ±1", 2.0 * c0));
        }
    }
    let lm = lambda_moment(m, sigma)?;
    if lambda < lm * (1.0 - 1e-12) {
        return precondition_err(format!("λ = {lambda} is below λ_M = {lm}"));
    }
    let c_c = 4.0 / (1.0 - c0 * c0);
    let mut constants = GuaranteeConstants::new(qic, c_c, m, lambda)?;
    constants.c_prime = moment_c_prime(qic)?;
    Ok(MomentCorollary {
        constants,
        lambda_m: lm,
        c0,
        general_c_prime: general_c_prime(qic, c_c),
        failure_probability: failure_probability(CalibrationCase::Moment { m, sigma }, lambda)?,
        failure_formula: MOMENT_FAILURE_FORMULA,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BregmanReport {
    pub d_value: f64,
    pub bound_2lambda: f64,
    /// `Σ Δ̂_k min{C_a m² d(T̂_k, S)², C_b}`.
    pub weak_wasserstein_sum: f64,
    pub within_bound: bool,
}

/// `d = Σ Δ̂_k [1 − |P(T̂_k)| cos(θ̂_k + arg P(T̂_k))]` for a certificate `P`
/// of the truth.
pub fn bregman_diagnostic(
    p: &GeneralizedPolynomial,
    truth: &DiscreteMeasure,
    estimate: &DiscreteMeasure,
    consts: &GuaranteeConstants,
) -> Result<BregmanReport> {
    if truth.is_empty() {
        return domain_err("the diagnostic needs a nonempty truth");
    }
    let worst = truth
        .atoms()
        .iter()
        .map(|a| (p.eval(a.location) - Complex64::from_polar(1.0, -a.phase)).norm())
        .fold(0.0f64, f64::max);
    if worst > PHASE_TOL {
        return precondition_err(format!("P misses the phases of the truth by {worst:e}"));
    }
    let dom = truth.domain();
    let s = truth.locations();
    let m = consts.effective_m as f64;
    let mut d = 0.0;
    let mut ww = 0.0;
    for a in estimate.atoms() {
        let v = p.eval(a.location);
        d += a.amplitude * (1.0 - v.norm() * (a.phase + v.arg()).cos());
        let dist = nearest(a.location, &s, dom).map_or(0.0, |n| n.1);
        ww += a.amplitude * (consts.qic.c_a * m * m * dist * dist).min(consts.qic.c_b);
    }
    Ok(BregmanReport {
        d_value: d,
        bound_2lambda: 2.0 * consts.lambda,
        weak_wasserstein_sum: ww,
        within_bound: d >= -1e-12 * (1.0 + d.abs()) && d <= 2.0 * consts.lambda,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictionCheck {
    /// Certified upper bound on `‖⟨c(Δ̂) − c(Δ), Φ⟩‖∞`.
    pub e_sup: f64,
    pub lambda: f64,
    pub lambda0: f64,
    /// `λ + λ₀ − e_sup`.
    pub slack: f64,
}

/// Prediction bound `‖E‖∞ ≤ λ + λ₀` for the realized noise level `λ₀`.
pub fn prediction_bound(
    fam: MeasurementFamily,
    estimate: &DiscreteMeasure,
    truth: &DiscreteMeasure,
    lambda: f64,
    lambda0: f64,
) -> Result<PredictionCheck> {
    let e = forward(estimate, fam)?.sub(&forward(truth, fam)?)?;
    let p = GeneralizedPolynomial::new(fam, e.values)?;
    let sup = sup_norm_refined(&p, 16 * fam.size(), 1e-7, 400_000)?;
    Ok(PredictionCheck {
        e_sup: sup.upper,
        lambda,
        lambda0,
        slack: lambda + lambda0 - sup.upper,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificate::construct_fourier_certificate;
    use crate::measure::Domain;

    fn fourier_consts(fc: usize, lambda: f64) -> GuaranteeConstants {
        GuaranteeConstants::new(FOURIER_QIC, PI * PI, 2 * fc, lambda).unwrap()
    }

    #[test]
    fn threshold_is_strict() {
        let k = fourier_consts(64, 1.0);
        assert!(k.output_radius(2.0 / 0.0092).is_none());
        assert!(k.output_radius(2.0 / 0.0092 * (1.0 + 1e-12)).is_some());
        assert!(k.input_radius(k.c_prime).is_none());
    }

    #[test]
    fn radius_at_400_lambda() {
        let fc = 64;
        let k = fourier_consts(fc, 0.5);
        let r = k.output_radius(400.0 * 0.5).unwrap();
        let m = (2 * fc) as f64;
        assert!((r * m - (2.0f64 / (0.0838 * 400.0)).sqrt()).abs() < 1e-14);
        assert!((r * m - 0.2443).abs() < 5e-5);
        // at the threshold the radius reaches c0/m
        let edge = k.output_radius(k.output_threshold() * (1.0 + 1e-14)).unwrap();
        assert!((edge - k.max_radius()).abs() < 1e-12 * k.max_radius());
    }

    #[test]
    fn fourier_c_prime() {
        let k = fourier_consts(128, 1.0);
        let a: f64 = 2.0 * (1.0 - 0.0092) / 0.0092;
        let b: f64 = PI * PI / 0.0838;
        assert!((a - 215.391_304_347_826).abs() < 1e-9 && (b - 117.775).abs() < 1e-3);
        assert!((k.c_prime - (2.0 + a)).abs() < 1e-12);
        assert!((217.0..218.0).contains(&k.c_prime));
    }

    #[test]
    fn fourier_corollary_gates_and_values() {
        assert!(matches!(fourier_guarantees(64, 1.0, 1e3), Err(crate::Error::Precondition(_))));
        let lf = lambda_fourier(128, 1.0).unwrap();
        assert!(matches!(fourier_guarantees(128, 1.0, 0.99 * lf), Err(crate::Error::Precondition(_))));
        let g = fourier_guarantees(128, 1.0, lf).unwrap();
        assert!((g.lambda_f - 122.08).abs() < 0.01);
        assert_eq!(g.detection_threshold, 218.0 * lf);
        assert!((g.corollary_max_radius * 128.0 - 0.1649).abs() < 1e-15);
        assert!(g.radius_consistency_residual < 0.01);
        assert!((g.failure_probability - 1.0 / 64.0).abs() < 1e-12);
        let r = g.corollary_radius(400.0 * lf).unwrap();
        let theorem = g.constants.output_radius(400.0 * lf).unwrap();
        assert!((r / theorem - 1.0).abs() < 0.01);
    }

    #[test]
    fn moment_corollary() {
        let qic = QicConstants::new(0.05, 0.01).unwrap();
        let lm = lambda_moment(9, 1.0).unwrap();
        let g = moment_guarantees(9, 1.0, lm, qic, None).unwrap();
        assert!((g.c0 - 0.2f64.sqrt()).abs() < 1e-15);
        assert!((g.constants.c_prime - 200.0).abs() < 1e-9);
        assert!((g.constants.c_c - 4.0 / 0.8).abs() < 1e-12);
        assert!(matches!(moment_guarantees(8, 1.0, 1e3, qic, None), Err(crate::Error::Precondition(_))));
        assert!(moment_guarantees(9, 1.0, lm, qic, Some(&[0.0, 0.1])).is_ok());
        assert!(matches!(
            moment_guarantees(9, 1.0, lm, qic, Some(&[0.15])),
            Err(crate::Error::Precondition(_))
        ));
        let lm100 = lambda_moment(100, 1.0).unwrap();
        let p = moment_guarantees(100, 1.0, lm100, qic, None).unwrap().failure_probability;
        assert!((p - 0.168).abs() < 1e-3, "{p}");
    }

    #[test]
    fn localization_on_exact_recovery() {
        let fc = 32;
        let truth = DiscreteMeasure::new(Domain::Circle, [(0.2, 500.0, 0.0), (0.6, 300.0, 1.0)]).unwrap();
        let k = fourier_consts(fc, 1.0);
        let loc = output_localization(&truth, Some(&truth), &k).unwrap();
        assert_eq!(loc.holds, Some(true));
        assert_eq!(loc.far_mass, Some(0.0));
        assert_eq!(loc.near_mass_moment, Some(0.0));
        assert!(loc.spikes.iter().all(|s| s.contained == Some(true) && s.unique == Some(true)));
        // a displaced heavy atom beyond its radius is a violation
        let r = k.output_radius(500.0).unwrap();
        let moved = DiscreteMeasure::new(Domain::Circle, [(0.2 + 1.5 * r, 500.0, 0.0)]).unwrap();
        let loc = output_localization(&moved, Some(&truth), &k).unwrap();
        assert_eq!(loc.spikes[0].contained, Some(false));
        assert_eq!(loc.holds, Some(false));
        let det = input_detection(&truth, &truth, &k).unwrap();
        assert!(det.iter().all(|d| d.discrepancy == 0.0 && d.detected == Some(true)));
    }

    #[test]
    fn radii_shrink_with_amplitude_and_lambda() {
        let k = fourier_consts(64, 1.0);
        let a = k.output_radius(1e4).unwrap();
        assert!(k.output_radius(2e4).unwrap() < a);
        assert!(k.with_lambda(0.5).output_radius(1e4).unwrap() < a);
        assert!(k.input_radius(2e4).unwrap() > k.input_radius(4e4).unwrap());
    }

    #[test]
    fn bregman_vanishes_at_truth_and_bounds_weak_sum() {
        let fc = 128;
        let truth = DiscreteMeasure::new(Domain::Circle, [(0.1, 2.0, 0.5), (0.5, 1.0, 2.0), (0.8, 3.0, 4.0)]).unwrap();
        let phases: Vec<f64> = truth.atoms().iter().map(|a| a.phase).collect();
        let p = construct_fourier_certificate(&truth.locations(), &phases, fc).unwrap();
        let k = fourier_consts(fc, 1.0);
        let b = bregman_diagnostic(&p, &truth, &truth, &k).unwrap();
        assert!(b.d_value.abs() < 1e-9);
        let est = DiscreteMeasure::new(Domain::Circle, [(0.1005, 2.1, 0.4), (0.45, 0.3, 0.0), (0.8, 2.9, 4.1)]).unwrap();
        let b = bregman_diagnostic(&p, &truth, &est, &k).unwrap();
        assert!(b.d_value >= 0.0 && b.weak_wasserstein_sum <= b.d_value + 1e-12);
        let bad = vec![0.0; 3];
        let q = construct_fourier_certificate(&truth.locations(), &bad, fc).unwrap();
        assert!(bregman_diagnostic(&q, &truth, &est, &k).is_err());
    }
}
