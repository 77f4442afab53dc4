//! Orthonormal measurement families, the forward operator and generalized
//! polynomials.
//!
//! Two families are supported:
//!
//! * Fourier with cut-off `f_c`: `φ_k(x) = exp(i2πkx)`, `k = -f_c..=f_c`, on the
//!   circle, orthonormal for Lebesgue measure on `[0, 1)`.
//! * Chebyshev of degree `m`: `φ_0 = 1`, `φ_k = √2·T_k`, on `[-1, 1]`,
//!   orthonormal for the arcsine law `(1/π)(1 - t²)^(-1/2) dt`.
//!
//! A [`GeneralizedPolynomial`] with coefficient vector `a` is the function
//! `P(x) = Σ_k conj(a_k) φ_k(x)`, so that `∫ P dμ = ⟨a, c(μ)⟩` for every
//! measure `μ`.
//!
//! Every polynomial also has a *chart* form: a trigonometric sum in a
//! parameter `t` (`t = x` for Fourier, `x = cos t` with `t ∈ [0, π]` for
//! Chebyshev). In the chart the classical Bernstein inequality reads
//! `|d/dt f| ≤ ω ‖f‖∞` with `ω` = [`MeasurementFamily::chart_bandwidth`]; all
//! grid certification is done in the chart.

use std::f64::consts::{PI, SQRT_2, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Result};
use crate::measure::{DiscreteMeasure, Domain};

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MeasurementFamily {
    Fourier { fc: usize },
    Chebyshev { degree: usize },
}

impl MeasurementFamily {
    pub fn fourier(fc: usize) -> Result<Self> {
        if fc == 0 {
            return domain_err("Fourier cut-off must be a positive integer");
        }
        Ok(Self::Fourier { fc })
    }

    pub fn chebyshev(degree: usize) -> Result<Self> {
        if degree == 0 {
            return domain_err("Chebyshev degree must be a positive integer");
        }
        Ok(Self::Chebyshev { degree })
    }

    /// Number of functions in the family (`2f_c + 1` or `m + 1`).
    pub fn size(self) -> usize {
        match self {
            Self::Fourier { fc } => 2 * fc + 1,
            Self::Chebyshev { degree } => degree + 1,
        }
    }

    /// The `m` that appears in every localization bound: `2f_c` or the degree.
    pub fn effective_m(self) -> usize {
        match self {
            Self::Fourier { fc } => 2 * fc,
            Self::Chebyshev { degree } => degree,
        }
    }

    pub fn domain(self) -> Domain {
        match self {
            Self::Fourier { .. } => Domain::Circle,
            Self::Chebyshev { .. } => Domain::Interval,
        }
    }

    /// Label of the `i`-th entry of coefficient and sample vectors.
    pub fn index_label(self, i: usize) -> i64 {
        match self {
            Self::Fourier { fc } => i as i64 - fc as i64,
            Self::Chebyshev { .. } => i as i64,
        }
    }

    pub fn check_point(self, x: f64) -> Result<()> {
        match self {
            Self::Fourier { .. } if x.is_finite() => Ok(()),
            Self::Chebyshev { .. } if (-1.0..=1.0).contains(&x) => Ok(()),
            _ => domain_err(format!("point {x} outside the family domain")),
        }
    }

    /// `(φ_k(x))_k`.
    pub fn basis(self, x: f64) -> Vec<Complex64> {
        match self {
            Self::Fourier { fc } => {
                let step = Complex64::from_polar(1.0, TAU * x);
                let mut out = vec![Complex64::new(0.0, 0.0); 2 * fc + 1];
                out[fc] = Complex64::new(1.0, 0.0);
                let mut z = Complex64::new(1.0, 0.0);
                for k in 1..=fc {
                    // re-anchor periodically to keep the phasor on the unit circle
                    z = if k % 64 == 0 {
                        Complex64::from_polar(1.0, TAU * (k as f64) * x)
                    } else {
                        z * step
                    };
                    out[fc + k] = z;
                    out[fc - k] = z.conj();
                }
                out
            }
            Self::Chebyshev { degree } => chebyshev_t(degree, x)
                .into_iter()
                .enumerate()
                .map(|(k, t)| Complex64::new(if k == 0 { t } else { SQRT_2 * t }, 0.0))
                .collect(),
        }
    }

    /// Basis values with first and second x-derivatives.
    pub fn basis_with_derivatives(self, x: f64) -> [Vec<Complex64>; 3] {
        match self {
            Self::Fourier { .. } => {
                let b = self.basis(x);
                let d1 = b
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * I * (TAU * self.index_label(i) as f64))
                    .collect();
                let d2 = b
                    .iter()
                    .enumerate()
                    .map(|(i, v)| -v * (TAU * self.index_label(i) as f64).powi(2))
                    .collect();
                [b, d1, d2]
            }
            Self::Chebyshev { degree } => {
                let (t, d1, d2) = chebyshev_t_derivatives(degree, x);
                let scale = |k: usize| if k == 0 { 1.0 } else { SQRT_2 };
                let lift = |v: Vec<f64>| -> Vec<Complex64> {
                    v.into_iter()
                        .enumerate()
                        .map(|(k, s)| Complex64::new(scale(k) * s, 0.0))
                        .collect()
                };
                [lift(t), lift(d1), lift(d2)]
            }
        }
    }

    /// Bandwidth `ω` of the chart form: `|d/dt f| ≤ ω‖f‖∞` for every `f` in
    /// the span.
    pub fn chart_bandwidth(self) -> f64 {
        match self {
            Self::Fourier { fc } => TAU * fc as f64,
            Self::Chebyshev { degree } => degree as f64,
        }
    }

    pub fn chart_range(self) -> (f64, f64) {
        match self {
            Self::Fourier { .. } => (0.0, 1.0),
            Self::Chebyshev { .. } => (0.0, PI),
        }
    }

    pub fn chart_is_periodic(self) -> bool {
        matches!(self, Self::Fourier { .. })
    }

    pub fn chart_to_point(self, t: f64) -> f64 {
        match self {
            Self::Fourier { .. } => t.rem_euclid(1.0),
            Self::Chebyshev { .. } => t.cos(),
        }
    }

    pub fn point_to_chart(self, x: f64) -> f64 {
        match self {
            Self::Fourier { .. } => x.rem_euclid(1.0),
            Self::Chebyshev { .. } => x.clamp(-1.0, 1.0).acos(),
        }
    }

    /// Multiplier `s` such that the chart form is `Σ_j c_j exp(i j s t)`.
    pub(crate) fn chart_scale(self) -> f64 {
        match self {
            Self::Fourier { .. } => TAU,
            Self::Chebyshev { .. } => 1.0,
        }
    }
}

/// `T_0(x), …, T_m(x)` by the three-term recurrence.
pub fn chebyshev_t(m: usize, x: f64) -> Vec<f64> {
    let mut t = Vec::with_capacity(m + 1);
    t.push(1.0);
    if m >= 1 {
        t.push(x);
    }
    for k in 2..=m {
        let next = 2.0 * x * t[k - 1] - t[k - 2];
        t.push(next);
    }
    t
}

/// `T_k`, `T_k'` and `T_k''` by the differentiated recurrences
/// `T'_{k+1} = 2T_k + 2xT'_k - T'_{k-1}` and
/// `T''_{k+1} = 4T'_k + 2xT''_k - T''_{k-1}`. Being polynomial, they are exact
/// at `x = ±1`.
pub fn chebyshev_t_derivatives(m: usize, x: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let t = chebyshev_t(m, x);
    let mut d1 = vec![0.0; m + 1];
    let mut d2 = vec![0.0; m + 1];
    if m >= 1 {
        d1[1] = 1.0;
    }
    for k in 1..m {
        d1[k + 1] = 2.0 * t[k] + 2.0 * x * d1[k] - d1[k - 1];
        d2[k + 1] = 4.0 * d1[k] + 2.0 * x * d2[k] - d2[k - 1];
    }
    (t, d1, d2)
}

/// Observed or simulated generalized moments, one per family index.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleVector {
    pub family: MeasurementFamily,
    pub values: Vec<Complex64>,
}

impl SampleVector {
    pub fn new(family: MeasurementFamily, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != family.size() {
            return domain_err(format!(
                "sample vector has length {} but the family has {} functions",
                values.len(),
                family.size()
            ));
        }
        Ok(Self { family, values })
    }

    pub fn zeros(family: MeasurementFamily) -> Self {
        Self {
            family,
            values: vec![Complex64::new(0.0, 0.0); family.size()],
        }
    }

    pub fn norm2(&self) -> f64 {
        norm2(&self.values)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.family != other.family {
            return domain_err("sample vectors from different families");
        }
        Ok(Self {
            family: self.family,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.family != other.family {
            return domain_err("sample vectors from different families");
        }
        Ok(Self {
            family: self.family,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        })
    }

    /// The polynomial `Σ conj(v_k) φ_k` with these values as coefficients,
    /// i.e. `⟨v, Φ⟩`.
    pub fn as_polynomial(&self) -> GeneralizedPolynomial {
        GeneralizedPolynomial {
            family: self.family,
            coefficients: self.values.clone(),
        }
    }
}

pub(crate) fn norm2(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `⟨u, v⟩ = Σ conj(u_k) v_k`.
pub(crate) fn inner(u: &[Complex64], v: &[Complex64]) -> Complex64 {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

/// Generalized moments `c_k(μ) = Σ_j w_j φ_k(T_j)` of a discrete measure.
pub fn forward(mu: &DiscreteMeasure, fam: MeasurementFamily) -> Result<SampleVector> {
    if mu.domain() != fam.domain() {
        return domain_err(format!(
            "measure lives on {:?} but the family is defined on {:?}",
            mu.domain(),
            fam.domain()
        ));
    }
    let mut out = SampleVector::zeros(fam);
    for atom in mu.atoms() {
        fam.check_point(atom.location)?;
        let w = atom.weight();
        for (o, b) in out.values.iter_mut().zip(fam.basis(atom.location)) {
            *o += w * b;
        }
    }
    Ok(out)
}

/// `P(x) = Σ_k conj(a_k) φ_k(x)` over a measurement family.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedPolynomial {
    pub family: MeasurementFamily,
    pub coefficients: Vec<Complex64>,
}

impl GeneralizedPolynomial {
    pub fn new(family: MeasurementFamily, coefficients: Vec<Complex64>) -> Result<Self> {
        if coefficients.len() != family.size() {
            return domain_err(format!(
                "coefficient vector has length {} but the family has {} functions",
                coefficients.len(),
                family.size()
            ));
        }
        Ok(Self {
            family,
            coefficients,
        })
    }

    pub fn zero(family: MeasurementFamily) -> Self {
        Self {
            family,
            coefficients: vec![Complex64::new(0.0, 0.0); family.size()],
        }
    }

    /// Builds the polynomial whose values are `Σ p_k φ_k(x)` (no conjugation).
    pub fn from_expansion(family: MeasurementFamily, expansion: &[Complex64]) -> Result<Self> {
        Self::new(family, expansion.iter().map(|z| z.conj()).collect())
    }

    pub fn coefficient_norm(&self) -> f64 {
        norm2(&self.coefficients)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            family: self.family,
            coefficients: self.coefficients.iter().map(|z| z * s).collect(),
        }
    }

    pub fn combine(&self, alpha: f64, other: &Self, beta: f64) -> Result<Self> {
        if self.family != other.family {
            return domain_err("polynomials over different families");
        }
        Ok(Self {
            family: self.family,
            coefficients: self
                .coefficients
                .iter()
                .zip(&other.coefficients)
                .map(|(a, b)| a * alpha + b * beta)
                .collect(),
        })
    }

    pub fn eval(&self, x: f64) -> Complex64 {
        let b = self.family.basis(x);
        self.coefficients.iter().zip(&b).map(|(a, p)| a.conj() * p).sum()
    }

    pub fn eval_d1(&self, x: f64) -> Complex64 {
        self.eval_with_derivatives(x)[1]
    }

    pub fn eval_d2(&self, x: f64) -> Complex64 {
        self.eval_with_derivatives(x)[2]
    }

    /// `[P(x), P'(x), P''(x)]`.
    pub fn eval_with_derivatives(&self, x: f64) -> [Complex64; 3] {
        let bases = self.family.basis_with_derivatives(x);
        let mut out = [Complex64::new(0.0, 0.0); 3];
        for (o, b) in out.iter_mut().zip(bases.iter()) {
            *o = self.coefficients.iter().zip(b).map(|(a, p)| a.conj() * p).sum();
        }
        out
    }

    /// Integral against a discrete measure: `∫ P dμ = Σ_j w_j P(T_j)`.
    pub fn integrate(&self, mu: &DiscreteMeasure) -> Complex64 {
        mu.atoms().iter().map(|a| a.weight() * self.eval(a.location)).sum()
    }

    /// Chart form of the polynomial as a trigonometric series.
    pub fn chart_series(&self) -> TrigSeries {
        match self.family {
            MeasurementFamily::Fourier { fc } => TrigSeries {
                half_width: fc,
                scale: self.family.chart_scale(),
                coeffs: self.coefficients.iter().map(|a| a.conj()).collect(),
            },
            MeasurementFamily::Chebyshev { degree } => {
                let mut coeffs = vec![Complex64::new(0.0, 0.0); 2 * degree + 1];
                coeffs[degree] = self.coefficients[0].conj();
                for k in 1..=degree {
                    let c = self.coefficients[k].conj() * (SQRT_2 / 2.0);
                    coeffs[degree + k] = c;
                    coeffs[degree - k] = c;
                }
                TrigSeries {
                    half_width: degree,
                    scale: 1.0,
                    coeffs,
                }
            }
        }
    }
}

/// `f(t) = Σ_{j=-J..=J} c_j exp(i j s t)`.
#[derive(Debug, Clone)]
pub struct TrigSeries {
    pub half_width: usize,
    pub scale: f64,
    /// `c_{-J}, …, c_J`.
    pub coeffs: Vec<Complex64>,
}

impl TrigSeries {
    pub fn bandwidth(&self) -> f64 {
        self.half_width as f64 * self.scale
    }

    /// Series of the `order`-th derivative in `t`.
    pub fn derivative(&self, order: u32) -> TrigSeries {
        let j0 = self.half_width as i64;
        TrigSeries {
            half_width: self.half_width,
            scale: self.scale,
            coeffs: self
                .coeffs
                .iter()
                .enumerate()
                .map(|(i, c)| c * (I * ((i as i64 - j0) as f64 * self.scale)).powu(order))
                .collect(),
        }
    }

    /// Value and first two derivatives at `t`.
    pub fn eval3(&self, t: f64) -> [Complex64; 3] {
        let j0 = self.half_width;
        let step = Complex64::from_polar(1.0, self.scale * t);
        let mut out = [self.coeffs[j0], Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)];
        let mut z = Complex64::new(1.0, 0.0);
        for j in 1..=j0 {
            z = if j % 64 == 0 {
                Complex64::from_polar(1.0, self.scale * t * j as f64)
            } else {
                z * step
            };
            let w = j as f64 * self.scale;
            let plus = self.coeffs[j0 + j] * z;
            let minus = self.coeffs[j0 - j] * z.conj();
            out[0] += plus + minus;
            out[1] += (plus - minus) * I * w;
            out[2] -= (plus + minus) * (w * w);
        }
        out
    }

    pub fn eval(&self, t: f64) -> Complex64 {
        self.eval3(t)[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_poly(fam: MeasurementFamily, rng: &mut ChaCha8Rng) -> GeneralizedPolynomial {
        let coeffs = (0..fam.size())
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        GeneralizedPolynomial::new(fam, coeffs).unwrap()
    }

    #[test]
    fn forward_examples() {
        let f = MeasurementFamily::fourier(2).unwrap();
        let dirac = DiscreteMeasure::new(Domain::Circle, [(0.0, 1.0, 0.0)]).unwrap();
        for v in forward(&dirac, f).unwrap().values {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
        let c = MeasurementFamily::chebyshev(3).unwrap();
        let edge = DiscreteMeasure::new(Domain::Interval, [(1.0, 1.0, 0.0)]).unwrap();
        let y = forward(&edge, c).unwrap();
        assert!((y.values[0].re - 1.0).abs() < 1e-15);
        for v in &y.values[1..] {
            assert!((v.re - SQRT_2).abs() < 1e-14 && v.im == 0.0);
        }
        let f1 = MeasurementFamily::fourier(1).unwrap();
        let two = DiscreteMeasure::new(Domain::Circle, [(0.25, 1.0, 0.0), (0.75, 1.0, 0.0)]).unwrap();
        let y = forward(&two, f1).unwrap();
        assert!((y.values[1] - Complex64::new(2.0, 0.0)).norm() < 1e-14);
        assert!(y.values[0].norm() < 1e-14 && y.values[2].norm() < 1e-14);
        assert!(forward(&two, c).is_err());
    }

    #[test]
    fn dirichlet_peak() {
        let m = 7;
        let f = MeasurementFamily::fourier(m).unwrap();
        let p = GeneralizedPolynomial::new(f, vec![Complex64::new(1.0, 0.0); f.size()]).unwrap();
        assert!((p.eval(0.0).re - (2 * m + 1) as f64).abs() < 1e-12);
        // |P|² is stationary at its interior maximum
        let [v, d1, _] = p.eval_with_derivatives(0.0);
        assert!((v.conj() * d1).re.abs() < 1e-9);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        for fam in [MeasurementFamily::fourier(9).unwrap(), MeasurementFamily::chebyshev(12).unwrap()] {
            for _ in 0..20 {
                let p = random_poly(fam, &mut rng);
                let x = match fam {
                    MeasurementFamily::Fourier { .. } => rng.random::<f64>(),
                    MeasurementFamily::Chebyshev { .. } => 1.8 * rng.random::<f64>() - 0.9,
                };
                let [_, d1, d2] = p.eval_with_derivatives(x);
                let fd1 = (p.eval(x + h) - p.eval(x - h)) / (2.0 * h);
                let fd2 = (p.eval_d1(x + h) - p.eval_d1(x - h)) / (2.0 * h);
                assert!((d1 - fd1).norm() <= 1e-5 * d1.norm().max(1.0), "{d1} vs {fd1}");
                assert!((d2 - fd2).norm() <= 1e-5 * d2.norm().max(1.0), "{d2} vs {fd2}");
            }
        }
    }

    #[test]
    fn chebyshev_derivatives_at_endpoints() {
        // T_k'(1) = k², T_k''(1) = k²(k²-1)/3, T_k'(-1) = (-1)^(k+1) k²
        let (_, d1, d2) = chebyshev_t_derivatives(6, 1.0);
        let (_, m1, _) = chebyshev_t_derivatives(6, -1.0);
        for k in 0..=6usize {
            let k2 = (k * k) as f64;
            assert!((d1[k] - k2).abs() < 1e-12);
            assert!((d2[k] - k2 * (k2 - 1.0) / 3.0).abs() < 1e-9);
            let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
            assert!((m1[k] - sign * k2).abs() < 1e-12);
        }
    }

    #[test]
    fn chart_series_agrees_with_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for fam in [MeasurementFamily::fourier(6).unwrap(), MeasurementFamily::chebyshev(8).unwrap()] {
            let p = random_poly(fam, &mut rng);
            let s = p.chart_series();
            for i in 0..25 {
                let t = fam.chart_range().1 * i as f64 / 24.0;
                let x = fam.chart_to_point(t);
                assert!((s.eval(t) - p.eval(x)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn integral_matches_inner_product_with_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fam = MeasurementFamily::chebyshev(5).unwrap();
        let p = random_poly(fam, &mut rng);
        let mu = DiscreteMeasure::new(Domain::Interval, [(0.2, 1.5, 0.4), (-0.7, 0.5, 2.0)]).unwrap();
        let c = forward(&mu, fam).unwrap();
        assert!((p.integrate(&mu) - inner(&p.coefficients, &c.values)).norm() < 1e-12);
    }

}
