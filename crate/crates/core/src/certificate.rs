//! Dual certificates: the squared-Fejér interpolation construction on the
//! torus, certified verification of the quadratic isolation condition, an
//! empirical Bernstein isolation check and the one-phase interpolants `Q_j`.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain_err, precondition_err, Error, Result};
use crate::family::{GeneralizedPolynomial, MeasurementFamily, TrigSeries};
use crate::grid::{sup_norm_certified, ChartGrid};
use crate::measure::{min_separation, nearest, Domain};
use crate::noise::{sample_noise, NoiseModel};

/// Minimum separation, in units of `1/f_c`, under which the Fourier
/// construction is guaranteed.
pub const FOURIER_SEPARATION: f64 = 2.5;
/// Smallest cut-off for which the Fourier construction is guaranteed.
pub const FOURIER_MIN_CUTOFF: usize = 128;
/// Isolation constants of the Fourier construction.
pub const FOURIER_QIC: QicConstants = QicConstants { c_a: 0.0838, c_b: 0.0092 };
/// Absolute tolerance on `|P(T_k) - e^{-iθ_k}|`.
pub const PHASE_TOL: f64 = 1e-8;
/// Grid points per `1/f_c` used by default for verification.
pub const POINTS_PER_RESOLUTION: usize = 64;

/// After the linear solve the certificate is scaled so that `|P(T_k)|`
/// stays this far below one.
const PEAK_HEADROOM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QicConstants {
    #[serde(rename = "C_a")]
    pub c_a: f64,
    #[serde(rename = "C_b")]
    pub c_b: f64,
}

impl QicConstants {
    pub fn new(c_a: f64, c_b: f64) -> Result<Self> {
        if !(c_a > 0.0) || !(c_b > 0.0 && c_b < 1.0) {
            return domain_err(format!("need C_a > 0 and 0 < C_b < 1, got C_a={c_a}, C_b={c_b}"));
        }
        Ok(Self { c_a, c_b })
    }

    pub fn c0(&self) -> f64 {
        (self.c_b / self.c_a).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateReport {
    #[serde(skip)]
    pub polynomial: GeneralizedPolynomial,
    pub passed: bool,
    #[serde(flatten)]
    pub constants: QicConstants,
    pub phase_residual: f64,
    /// Certified lower bound on `min_x 1 - |P(x)| - min{C_a m² d(x,S)², C_b}`.
    pub qic_margin: f64,
    /// The same quantity at the evaluated points; `qic_margin ≤ observed_margin`.
    pub observed_margin: f64,
    pub grid_size: usize,
    /// Extra evaluations spent bisecting cells.
    pub refinements: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateOptions {
    /// Reject `f_c < 128`. When off, the construction still runs and its
    /// isolation must be checked with [`verify_qic`].
    pub require_large_cutoff: bool,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        Self {
            require_large_cutoff: true,
        }
    }
}

/// Fourier coefficients `κ_k`, `|k| ≤ 2⌊f_c/2⌋`, of the squared Fejér kernel
/// with `N = ⌊f_c/2⌋ + 1`. Indexed by `k + f_c`, zero-padded to `2f_c + 1`.
pub fn fejer_squared_coefficients(fc: usize) -> Vec<f64> {
    let n = fc / 2 + 1;
    let half = n as i64 - 1;
    let nf = (n * n) as f64;
    let fejer: Vec<f64> = (-half..=half).map(|j| (n as i64 - j.abs()) as f64 / nf).collect();
    let mut out = vec![0.0; 2 * fc + 1];
    for (a, fa) in fejer.iter().enumerate() {
        for (b, fb) in fejer.iter().enumerate() {
            let k = a as i64 + b as i64 - 2 * half;
            out[(k + fc as i64) as usize] += fa * fb;
        }
    }
    out
}

/// `K`, `K'`, `K''` of an even real trigonometric kernel at `t`.
fn kernel_eval(kappa: &[f64], fc: usize, t: f64) -> [f64; 3] {
    let mut out = [kappa[fc], 0.0, 0.0];
    for k in 1..=fc {
        let c = kappa[fc + k];
        if c == 0.0 {
            continue;
        }
        let w = TAU * k as f64;
        let (s, co) = (w * t).sin_cos();
        out[0] += 2.0 * c * co;
        out[1] -= 2.0 * c * w * s;
        out[2] -= 2.0 * c * w * w * co;
    }
    out
}

fn check_fourier_support(support: &[f64], fc: usize) -> Result<()> {
    for &t in support {
        if !t.is_finite() {
            return domain_err(format!("non-finite support point {t}"));
        }
    }
    if support.len() >= 2 {
        let sep = min_separation(support, Domain::Circle)?;
        let need = FOURIER_SEPARATION / fc as f64;
        if sep < need * (1.0 - 1e-12) {
            return precondition_err(format!(
                "minimum separation {sep} is below {FOURIER_SEPARATION}/f_c = {need}"
            ));
        }
    }
    Ok(())
}

/// Fourier certificate interpolating `e^{-iθ_k}` at `T_k` with vanishing
/// derivative, built from translates of the squared Fejér kernel.
pub fn construct_fourier_certificate(support: &[f64], phases: &[f64], fc: usize) -> Result<GeneralizedPolynomial> {
    construct_fourier_certificate_with(support, phases, fc, CertificateOptions::default())
}

pub fn construct_fourier_certificate_with(
    support: &[f64],
    phases: &[f64],
    fc: usize,
    opts: CertificateOptions,
) -> Result<GeneralizedPolynomial> {
    let fam = MeasurementFamily::fourier(fc)?;
    if support.len() != phases.len() {
        return domain_err("support and phases differ in length");
    }
    if opts.require_large_cutoff && fc < FOURIER_MIN_CUTOFF {
        return precondition_err(format!("f_c = {fc} is below {FOURIER_MIN_CUTOFF}"));
    }
    check_fourier_support(support, fc)?;
    let s = support.len();
    if s == 0 {
        return Ok(GeneralizedPolynomial::zero(fam));
    }
    let kappa = fejer_squared_coefficients(fc);
    let k2 = kernel_eval(&kappa, fc, 0.0)[2].abs();
    let scale = k2.sqrt();

    let mut a = DMatrix::<f64>::zeros(2 * s, 2 * s);
    for k in 0..s {
        for j in 0..s {
            let [v0, v1, v2] = kernel_eval(&kappa, fc, support[k] - support[j]);
            a[(k, j)] = v0;
            a[(k, s + j)] = v1 / scale;
            a[(s + k, j)] = v1;
            a[(s + k, s + j)] = v2 / scale;
        }
    }
    let lu = a.lu();
    let targets: Vec<Complex64> = phases.iter().map(|&th| Complex64::from_polar(1.0, -th)).collect();
    let solve = |rhs: Vec<f64>| -> Result<DVector<f64>> {
        lu.solve(&DVector::from_vec(rhs)).ok_or_else(|| Error::Numerical {
            message: "interpolation system is singular".into(),
            last_gap: None,
        })
    };
    let mut rhs_re = vec![0.0; 2 * s];
    let mut rhs_im = vec![0.0; 2 * s];
    for k in 0..s {
        rhs_re[k] = targets[k].re;
        rhs_im[k] = targets[k].im;
    }
    let x_re = solve(rhs_re)?;
    let x_im = solve(rhs_im)?;
    let alpha: Vec<Complex64> = (0..s).map(|j| Complex64::new(x_re[j], x_im[j])).collect();
    let beta: Vec<Complex64> = (0..s)
        .map(|j| Complex64::new(x_re[s + j], x_im[s + j]) / scale)
        .collect();

    // p_k = κ_k Σ_j (α_j + i2πk β_j) e^{-i2πkT_j}, and P = Σ conj(a_k) φ_k
    let mut coeffs = vec![Complex64::new(0.0, 0.0); fam.size()];
    for (idx, c) in coeffs.iter_mut().enumerate() {
        let kap = kappa[idx];
        if kap == 0.0 {
            continue;
        }
        let k = idx as f64 - fc as f64;
        let mut p = Complex64::new(0.0, 0.0);
        for j in 0..s {
            let e = Complex64::from_polar(1.0, -TAU * k * support[j]);
            p += (alpha[j] + Complex64::new(0.0, TAU * k) * beta[j]) * e;
        }
        *c = (kap * p).conj();
    }
    let mut poly = GeneralizedPolynomial::new(fam, coeffs)?;
    let peak = support.iter().map(|&t| poly.eval(t).norm()).fold(0.0, f64::max);
    if !peak.is_finite() {
        return Err(Error::Numerical {
            message: "certificate coefficients are not finite".into(),
            last_gap: None,
        });
    }
    if peak > 1.0 - PEAK_HEADROOM {
        poly = poly.scaled((1.0 - PEAK_HEADROOM) / peak);
    }
    Ok(poly)
}

/// Values of `r = |P|` and its first two chart derivatives, plus the data
/// the QIC check needs at one chart point.
#[derive(Debug, Clone, Copy)]
struct Node {
    t: f64,
    g: f64,
    r: f64,
    r1: f64,
    r2: f64,
    d: f64,
    sin_abs: f64,
}

struct QicContext<'a> {
    fam: MeasurementFamily,
    series: TrigSeries,
    support: &'a [f64],
    omega: f64,
    /// Certified upper bound on `‖P‖∞`.
    sup: f64,
    a: f64,
    c_b: f64,
}

impl QicContext<'_> {
    fn node(&self, t: f64) -> Node {
        let [p, p1, p2] = self.series.eval3(t);
        let g = p.norm_sqr();
        let r = g.sqrt();
        let (r1, r2) = if r > 0.0 {
            let dot = (p.conj() * p1).re;
            let r1 = dot / r;
            let r2 = (p1.norm_sqr() + (p.conj() * p2).re) / r - dot * dot / (r * r * r);
            (r1, r2)
        } else {
            (0.0, f64::INFINITY)
        };
        let x = self.fam.chart_to_point(t);
        let x = match self.fam.domain() {
            Domain::Circle => x.rem_euclid(1.0),
            Domain::Interval => x.clamp(-1.0, 1.0),
        };
        let d = nearest(x, self.support, self.fam.domain()).map_or(f64::INFINITY, |(_, d)| d);
        let sin_abs = match self.fam {
            MeasurementFamily::Fourier { .. } => 1.0,
            MeasurementFamily::Chebyshev { .. } => t.sin().abs(),
        };
        Node { t, g, r, r1, r2, d, sin_abs }
    }

    fn rhs(&self, d: f64) -> f64 {
        (self.a * d * d).min(self.c_b)
    }

    fn value(&self, n: &Node) -> f64 {
        1.0 - n.r - self.rhs(n.d)
    }

    /// Certified lower bound of `1 - |P| - rhs` on the cell `[u, v]`.
    fn cell_bound(&self, u: &Node, v: &Node) -> f64 {
        let w = v.t - u.t;
        let lip = match self.fam {
            MeasurementFamily::Fourier { .. } => 1.0,
            MeasurementFamily::Chebyshev { .. } => (u.sin_abs.max(v.sin_abs) + 0.5 * w).min(1.0),
        };
        let m = self.sup;
        let om = self.omega;

        // chord bound on |P|² with a bound on the distance over the cell
        let d_max = 0.5 * (u.d + v.d + lip * w);
        let p_max = (u.g.max(v.g) + om * om * w * w * m * m / 2.0).sqrt();
        let mut best = 1.0 - p_max - self.rhs(d_max);

        // Taylor bounds on |P| from either end, usable while |P| stays away from 0
        let rho = u.r.min(v.r) - om * m * w / 2.0;
        if rho > 0.05 && u.r2.is_finite() && v.r2.is_finite() {
            let l3 = om.powi(3) * (4.0 * m * m / rho + 6.0 * m.powi(4) / rho.powi(3) + 3.0 * m.powi(6) / rho.powi(5));
            let r2_max = u.r2.max(v.r2) + l3 * w / 2.0;
            for (n, dir) in [(u, 1.0), (v, -1.0)] {
                let c0 = 1.0 - n.r;
                let c1 = -dir * n.r1;
                let c2 = -0.5 * r2_max;
                let far = quad_min(c0 - self.c_b, c1, c2, w);
                let a = self.a;
                let near = quad_min(
                    c0 - a * n.d * n.d,
                    c1 - 2.0 * a * n.d * lip,
                    c2 - a * lip * lip,
                    w,
                );
                best = best.max(far.max(near));
            }
        }
        best
    }
}

/// Minimum of `c0 + c1 s + c2 s²` over `s ∈ [0, w]`.
fn quad_min(c0: f64, c1: f64, c2: f64, w: f64) -> f64 {
    let q = |s: f64| c0 + s * (c1 + s * c2);
    let mut m = q(0.0).min(q(w));
    if c2 > 0.0 {
        let s = -c1 / (2.0 * c2);
        if s > 0.0 && s < w {
            m = m.min(q(s));
        }
    }
    m
}

/// Certified check of `1 - |P(x)| ≥ min{C_a m² d(x,S)², C_b}` together with
/// the phase interpolation `P(T_k) = e^{-iθ_k}`.
pub fn verify_qic(
    p: &GeneralizedPolynomial,
    support: &[f64],
    phases: &[f64],
    qic: QicConstants,
    grid_size: usize,
) -> Result<CertificateReport> {
    verify_qic_budget(p, support, phases, qic, grid_size, 400_000)
}

/// [`verify_qic`] with an explicit cap on bisection evaluations.
pub fn verify_qic_budget(
    p: &GeneralizedPolynomial,
    support: &[f64],
    phases: &[f64],
    qic: QicConstants,
    grid_size: usize,
    max_evals: usize,
) -> Result<CertificateReport> {
    let fam = p.family;
    if grid_size < 16 * fam.size() {
        return domain_err(format!(
            "grid of {grid_size} points is too coarse; need at least {}",
            16 * fam.size()
        ));
    }
    if support.len() != phases.len() {
        return domain_err("support and phases differ in length");
    }
    for &t in support {
        fam.check_point(t)?;
    }
    let phase_residual = support
        .iter()
        .zip(phases)
        .map(|(&t, &th)| (p.eval(t) - Complex64::from_polar(1.0, -th)).norm())
        .fold(0.0, f64::max);

    let m = fam.effective_m() as f64;
    let series = p.chart_series();
    let ctx = QicContext {
        fam,
        omega: series.bandwidth(),
        sup: sup_norm_certified(p, grid_size)?.upper,
        series,
        support,
        a: qic.c_a * m * m,
        c_b: qic.c_b,
    };

    // uniform chart nodes, the spikes and the edges of their near regions
    let grid = ChartGrid::new(fam, grid_size);
    let mut ts: Vec<f64> = (0..grid.nodes).map(|i| grid.node(i)).collect();
    let radius = qic.c0() / m;
    let (lo, hi) = fam.chart_range();
    for &x in support {
        for y in [x, x - radius, x + radius] {
            match fam.domain() {
                Domain::Circle => ts.push(y.rem_euclid(1.0)),
                Domain::Interval => {
                    if (-1.0..=1.0).contains(&y) {
                        ts.push(fam.point_to_chart(y));
                    }
                }
            }
        }
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    if fam.chart_is_periodic() {
        let first = ts[0];
        ts.push(first + (hi - lo));
    }
    let nodes: Vec<Node> = ts.iter().map(|&t| ctx.node(t)).collect();

    let mut observed = nodes.iter().map(|n| ctx.value(n)).fold(f64::INFINITY, f64::min);
    let mut margin = f64::INFINITY;
    let mut evals = 0usize;
    let mut stack: Vec<(Node, Node)> = nodes.windows(2).map(|w| (w[0], w[1])).collect();
    while let Some((u, v)) = stack.pop() {
        let lb = ctx.cell_bound(&u, &v);
        let violated = ctx.value(&u) < 0.0 || ctx.value(&v) < 0.0;
        if lb >= 0.0 || violated || evals >= max_evals || v.t - u.t < 1e-13 {
            margin = margin.min(lb);
            continue;
        }
        let mid = ctx.node(0.5 * (u.t + v.t));
        evals += 1;
        observed = observed.min(ctx.value(&mid));
        stack.push((u, mid));
        stack.push((mid, v));
    }
    let margin = margin.min(observed);
    Ok(CertificateReport {
        polynomial: p.clone(),
        passed: phase_residual <= PHASE_TOL && margin >= 0.0,
        constants: qic,
        phase_residual,
        qic_margin: margin,
        observed_margin: observed,
        grid_size,
        refinements: evals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BipReport {
    /// Largest observed `|P''(x)| / (C_c m² ‖P‖∞)` over the near region.
    pub worst_ratio: f64,
    pub trials: usize,
    pub passed: bool,
}

/// Empirical falsification test of the Bernstein isolation property: random
/// polynomials, normalized by their grid maximum (a lower bound of the sup
/// norm, so ratios are overestimated), have their second derivative sampled
/// over the union of `[T - c0/m, T + c0/m]`.
pub fn verify_bip(fam: MeasurementFamily, support: &[f64], c0: f64, c_c: f64, trials: usize) -> Result<BipReport> {
    if !(c0 > 0.0) || !(c_c > 0.0) {
        return domain_err("need c0 > 0 and C_c > 0");
    }
    for &t in support {
        fam.check_point(t)?;
    }
    let m = fam.effective_m() as f64;
    let radius = c0 / m;
    if let MeasurementFamily::Chebyshev { .. } = fam {
        if support.iter().any(|&t| 1.0 - t.abs() < 2.0 * radius) {
            return precondition_err(format!("support must stay {} away from ±1", 2.0 * radius));
        }
    }
    let per_spike = 129;
    let mut xs = Vec::with_capacity(per_spike * support.len());
    for &t in support {
        for i in 0..per_spike {
            let y = t - radius + 2.0 * radius * i as f64 / (per_spike - 1) as f64;
            match fam.domain() {
                Domain::Circle => xs.push(y.rem_euclid(1.0)),
                Domain::Interval => xs.push(y.clamp(-1.0, 1.0)),
            }
        }
    }
    let grid = ChartGrid::new(fam, 16 * fam.size());
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_b1b);
    use rand::Rng;
    for _ in 0..trials {
        let model = NoiseModel::for_family(fam, 1.0, rng.random())?;
        let p = sample_noise(&model, fam)?.as_polynomial();
        let norm = grid.evaluate(&p.chart_series()).iter().map(|v| v.norm()).fold(0.0, f64::max);
        if norm == 0.0 {
            continue;
        }
        for &x in &xs {
            let ratio = p.eval_d2(x).norm() / (c_c * m * m * norm);
            worst = worst.max(ratio);
        }
    }
    Ok(BipReport {
        worst_ratio: worst,
        trials,
        passed: worst <= 1.0,
    })
}

/// `Q_j = (P + P̃)/2` with `P` interpolating ones on the support and `P̃`
/// interpolating `+1` at `T_j` and `-1` elsewhere, so `Q_j(T_k) = δ_{kj}`.
pub fn build_interpolation_qj(
    support: &[f64],
    j: usize,
    fam: MeasurementFamily,
    opts: CertificateOptions,
) -> Result<GeneralizedPolynomial> {
    let MeasurementFamily::Fourier { fc } = fam else {
        return domain_err("interpolation polynomials are built for the Fourier family only");
    };
    if j >= support.len() {
        return domain_err(format!("index {j} out of range for {} spikes", support.len()));
    }
    let ones = vec![0.0; support.len()];
    let signs: Vec<f64> = (0..support.len()).map(|k| if k == j { 0.0 } else { PI }).collect();
    let p = construct_fourier_certificate_with(support, &ones, fc, opts)?;
    let q = construct_fourier_certificate_with(support, &signs, fc, opts)?;
    p.combine(0.5, &q, 0.5)
}
