//! Active-set engine for the dual program.
//!
//! The projection of `y/λ` onto `{a : ‖P_a‖∞ ≤ 1}` is computed through its
//! primal counterpart: if `r = y − Σ_j c_j φ(x_j)` is the residual of an
//! atomic measure, then `r/λ` is the dual point. Each atom is updated in turn
//! by exact block minimization over `(c_j, x_j)` with the others fixed (one
//! Dykstra-style pass over an active constraint), and violated local maxima of
//! `|P_{r/λ}|` are added as new active constraints. Convergence is declared on
//! the certified primal-dual gap.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::family::{inner, norm2, GeneralizedPolynomial, MeasurementFamily, TrigSeries};
use crate::grid::{local_maxima, sup_norm_refined, SupBound};

const SETTLE_CYCLES: usize = 200;
const SWEEPS_PER_CYCLE: usize = 3;
const JOINT_STEPS: usize = 30;
const NEWTON_STEPS: usize = 60;

#[derive(Debug, Clone)]
pub(crate) struct SlideAtom {
    pub t: f64,
    pub c: Complex64,
    phi: Vec<Complex64>,
}

pub(crate) struct DualEngine<'a> {
    fam: MeasurementFamily,
    y: &'a [Complex64],
    lambda: f64,
    pub r: Vec<Complex64>,
    pub atoms: Vec<SlideAtom>,
    window: f64,
    t_tol: f64,
    merge_tol: f64,
}

/// `‖φ(x(t))‖²` and its first two chart derivatives.
fn column_norm(fam: MeasurementFamily, t: f64) -> (f64, f64, f64) {
    match fam {
        MeasurementFamily::Fourier { .. } => (fam.size() as f64, 0.0, 0.0),
        MeasurementFamily::Chebyshev { degree } => {
            // 1 + 2Σ cos²(kt) = (m + 1) + Σ cos(2kt)
            let (mut n, mut n1, mut n2) = ((degree + 1) as f64, 0.0, 0.0);
            for k in 1..=degree {
                let w = 2.0 * k as f64;
                let (s, c) = (w * t).sin_cos();
                n += c;
                n1 -= w * s;
                n2 -= w * w * c;
            }
            (n, n1, n2)
        }
    }
}

/// `φ(x(t))` with its first two chart derivatives.
fn chart_columns(fam: MeasurementFamily, t: f64) -> [Vec<Complex64>; 3] {
    match fam {
        MeasurementFamily::Fourier { .. } => {
            let phi = fam.basis(t);
            let w = |i: usize| std::f64::consts::TAU * fam.index_label(i) as f64;
            let d1 = phi.iter().enumerate().map(|(i, v)| v * Complex64::new(0.0, w(i))).collect();
            let d2 = phi.iter().enumerate().map(|(i, v)| -v * w(i) * w(i)).collect();
            [phi, d1, d2]
        }
        MeasurementFamily::Chebyshev { degree } => {
            let mut out = [Vec::with_capacity(degree + 1), Vec::new(), Vec::new()];
            for k in 0..=degree {
                let a = if k == 0 { 1.0 } else { std::f64::consts::SQRT_2 };
                let kf = k as f64;
                let (s, c) = (kf * t).sin_cos();
                out[0].push(Complex64::new(a * c, 0.0));
                out[1].push(Complex64::new(-a * kf * s, 0.0));
                out[2].push(Complex64::new(-a * kf * kf * c, 0.0));
            }
            out
        }
    }
}

/// `h(t) = (|P(t)| − λ)₊² / n(t)` with two derivatives: the decrease of the
/// objective obtained by placing one atom at `t` against the residual `P`.
fn gain(series: &TrigSeries, fam: MeasurementFamily, lambda: f64, t: f64) -> (f64, f64, f64) {
    let [p, p1, p2] = series.eval3(t);
    let s = p.norm();
    if s <= lambda {
        return (0.0, 0.0, 0.0);
    }
    let s1 = (p.conj() * p1).re / s;
    let s2 = (p1.norm_sqr() + (p.conj() * p2).re) / s - s1 * s1 / s;
    let q = s - lambda;
    let (n, n1, n2) = column_norm(fam, t);
    let h = q * q / n;
    let h1 = 2.0 * q * s1 / n - q * q * n1 / (n * n);
    let h2 = 2.0 * (s1 * s1 + q * s2) / n - 4.0 * q * s1 * n1 / (n * n) - q * q * n2 / (n * n)
        + 2.0 * q * q * n1 * n1 / (n * n * n);
    (h, h1, h2)
}

impl<'a> DualEngine<'a> {
    pub fn new(fam: MeasurementFamily, y: &'a [Complex64], lambda: f64, merge_tol: f64) -> Self {
        let window = match fam {
            MeasurementFamily::Fourier { .. } => 0.5 / fam.size() as f64,
            MeasurementFamily::Chebyshev { degree } => 0.5 * std::f64::consts::PI / (degree + 1) as f64,
        };
        Self {
            fam,
            y,
            lambda,
            r: y.to_vec(),
            atoms: Vec::new(),
            window,
            t_tol: 1e-15 * fam.chart_range().1,
            merge_tol,
        }
    }

    fn column(&self, t: f64) -> Vec<Complex64> {
        self.fam.basis(self.fam.chart_to_point(t))
    }

    fn chart_distance(&self, a: f64, b: f64) -> f64 {
        let d = (a - b).abs();
        if self.fam.chart_is_periodic() {
            d.min(1.0 - d)
        } else {
            d
        }
    }

    fn clamp_chart(&self, t: f64) -> f64 {
        let (lo, hi) = self.fam.chart_range();
        if self.fam.chart_is_periodic() {
            t.rem_euclid(hi)
        } else {
            t.clamp(lo, hi)
        }
    }

    pub fn objective(&self) -> f64 {
        0.5 * norm2(&self.r).powi(2) + self.lambda * self.atoms.iter().map(|a| a.c.norm()).sum::<f64>()
    }

    /// Recomputes the residual from scratch to shed accumulated rounding.
    pub fn refresh(&mut self) {
        self.r = self.y.to_vec();
        for a in &self.atoms {
            for (r, p) in self.r.iter_mut().zip(&a.phi) {
                *r -= a.c * p;
            }
        }
    }

    pub fn add_atom(&mut self, t: f64) {
        let phi = self.column(t);
        self.atoms.push(SlideAtom {
            t,
            c: Complex64::new(0.0, 0.0),
            phi,
        });
    }

    /// Exact block update of atom `j`, returning how far it moved.
    fn slide(&mut self, j: usize) -> f64 {
        let c_old = self.atoms[j].c;
        for (r, p) in self.r.iter_mut().zip(&self.atoms[j].phi) {
            *r += c_old * p;
        }
        let series = GeneralizedPolynomial {
            family: self.fam,
            coefficients: self.r.clone(),
        }
        .chart_series();
        let t0 = self.atoms[j].t;
        let (lo, hi) = (t0 - self.window, t0 + self.window);
        let mut t = t0;
        let (mut h, _, _) = gain(&series, self.fam, self.lambda, t);
        for _ in 0..NEWTON_STEPS {
            if h == 0.0 {
                break;
            }
            let (_, h1, h2) = gain(&series, self.fam, self.lambda, t);
            let cap = self.window / 4.0;
            let mut step = if h2 < 0.0 { -h1 / h2 } else { h1.signum() * self.window / 8.0 };
            step = step.clamp(-cap, cap);
            let mut moved = false;
            while step.abs() > self.t_tol {
                let tn = self.clamp_chart((t + step).clamp(lo, hi));
                let (hn, _, _) = gain(&series, self.fam, self.lambda, tn);
                if hn >= h {
                    moved = (tn - t).abs() > self.t_tol;
                    t = tn;
                    h = hn;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }
        let p = series.eval(t);
        let s = p.norm();
        let (n, _, _) = column_norm(self.fam, t);
        let c = if s > self.lambda {
            p.conj() * ((1.0 - self.lambda / s) / n)
        } else {
            Complex64::new(0.0, 0.0)
        };
        let phi = self.column(t);
        for (r, q) in self.r.iter_mut().zip(&phi) {
            *r -= c * q;
        }
        let moved = self.chart_distance(t, t0);
        let atom = &mut self.atoms[j];
        atom.t = t;
        atom.c = c;
        atom.phi = phi;
        moved
    }

    /// One pass over all atoms, then pruning and merging.
    fn sweep(&mut self) -> f64 {
        let mut moved = 0.0f64;
        for j in 0..self.atoms.len() {
            moved = moved.max(self.slide(j));
        }
        self.atoms.retain(|a| a.c.norm() > 0.0);
        // coalesce atoms that slid onto each other; the survivor absorbs the
        // other's mass at the next pass
        let dom = self.fam.domain();
        let mut i = 0;
        while i < self.atoms.len() {
            let xi = self.fam.chart_to_point(self.atoms[i].t);
            let dup = (0..self.atoms.len()).find(|&k| {
                k != i && dom.distance(xi, self.fam.chart_to_point(self.atoms[k].t)) < self.merge_tol
            });
            match dup {
                Some(k) => {
                    let drop = if self.atoms[i].c.norm() < self.atoms[k].c.norm() { i } else { k };
                    let a = self.atoms.remove(drop);
                    for (r, p) in self.r.iter_mut().zip(&a.phi) {
                        *r += a.c * p;
                    }
                    moved = f64::INFINITY;
                    i = 0;
                }
                None => i += 1,
            }
        }
        moved
    }

    /// Alternates block passes with joint Newton steps until the objective
    /// and positions settle.
    pub fn settle(&mut self) -> usize {
        let mut prev = self.objective();
        for cycle in 1..=SETTLE_CYCLES {
            let mut moved = 0.0f64;
            for _ in 0..SWEEPS_PER_CYCLE {
                moved = moved.max(self.sweep());
            }
            let mv_joint = self.joint_newton(JOINT_STEPS);
            moved = moved.max(mv_joint);
            let obj = self.objective();
            let still = (prev - obj).abs() <= 1e-15 * obj.abs().max(1e-300);
            prev = obj;
            if still && moved <= 1e3 * self.t_tol {
                return cycle;
            }
        }
        SETTLE_CYCLES
    }

    fn objective_of(&self, ts: &[f64], cs: &[Complex64]) -> (f64, Vec<Complex64>, Vec<Vec<Complex64>>) {
        let mut r = self.y.to_vec();
        let mut cols = Vec::with_capacity(ts.len());
        for (&t, &c) in ts.iter().zip(cs) {
            let phi = self.column(t);
            for (rv, p) in r.iter_mut().zip(&phi) {
                *rv -= c * p;
            }
            cols.push(phi);
        }
        let f = 0.5 * norm2(&r).powi(2) + self.lambda * cs.iter().map(|c| c.norm()).sum::<f64>();
        (f, r, cols)
    }

    /// Damped Newton on `(Re c_j, Im c_j, t_j)` jointly, all `c_j ≠ 0`.
    /// Returns the largest position change.
    fn joint_newton(&mut self, steps: usize) -> f64 {
        let mut moved = 0.0f64;
        let s = self.atoms.len();
        if s == 0 {
            return 0.0;
        }
        let re = |a: Complex64| a.re;
        for _ in 0..steps {
            let f0 = self.objective();
            let derivs: Vec<[Vec<Complex64>; 3]> = self.atoms.iter().map(|a| chart_columns(self.fam, a.t)).collect();
            // Jacobian columns of the model Σ c_j φ(t_j)
            let mut jac: Vec<Vec<Complex64>> = Vec::with_capacity(3 * s);
            for (a, d) in self.atoms.iter().zip(&derivs) {
                jac.push(d[0].clone());
                jac.push(d[0].iter().map(|v| v * Complex64::i()).collect());
                jac.push(d[1].iter().map(|v| v * a.c).collect());
            }
            let n = 3 * s;
            let mut h = DMatrix::<f64>::zeros(n, n);
            let mut g = DVector::<f64>::zeros(n);
            for p in 0..n {
                g[p] = -re(inner(&jac[p], &self.r));
                for q in 0..=p {
                    let v = re(inner(&jac[p], &jac[q]));
                    h[(p, q)] = v;
                    h[(q, p)] = v;
                }
            }
            for (j, (a, d)) in self.atoms.iter().zip(&derivs).enumerate() {
                let (pa, pb, pt) = (3 * j, 3 * j + 1, 3 * j + 2);
                // second-order model terms against the residual
                let d1r = inner(&d[1], &self.r);
                h[(pa, pt)] -= d1r.re;
                h[(pt, pa)] -= d1r.re;
                let id1r = inner(&d[1].iter().map(|v| v * Complex64::i()).collect::<Vec<_>>(), &self.r);
                h[(pb, pt)] -= id1r.re;
                h[(pt, pb)] -= id1r.re;
                let cd2 = d[2].iter().map(|v| v * a.c).collect::<Vec<_>>();
                h[(pt, pt)] -= re(inner(&cd2, &self.r));
                // penalty λ|c|
                let m = a.c.norm();
                if m > 0.0 {
                    let u = [a.c.re / m, a.c.im / m];
                    g[pa] += self.lambda * u[0];
                    g[pb] += self.lambda * u[1];
                    let k = self.lambda / m;
                    h[(pa, pa)] += k * (1.0 - u[0] * u[0]);
                    h[(pb, pb)] += k * (1.0 - u[1] * u[1]);
                    h[(pa, pb)] -= k * u[0] * u[1];
                    h[(pb, pa)] -= k * u[0] * u[1];
                }
            }
            let diag: Vec<f64> = (0..n).map(|p| h[(p, p)].abs().max(1e-300)).collect();
            let mut accepted = None;
            for mu in [0.0, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2, 1.0, 1e2] {
                let mut hm = h.clone();
                for p in 0..n {
                    hm[(p, p)] += mu * diag[p];
                }
                let Some(ch) = hm.cholesky() else { continue };
                let delta = ch.solve(&(-&g));
                let ts: Vec<f64> = (0..s).map(|j| self.clamp_chart(self.atoms[j].t + delta[3 * j + 2])).collect();
                let cs: Vec<Complex64> = (0..s)
                    .map(|j| self.atoms[j].c + Complex64::new(delta[3 * j], delta[3 * j + 1]))
                    .collect();
                if ts.iter().zip(&self.atoms).any(|(t, a)| self.chart_distance(*t, a.t) > self.window) {
                    continue;
                }
                let (f1, r1, cols) = self.objective_of(&ts, &cs);
                if f1 < f0 {
                    accepted = Some((f1, ts, cs, r1, cols));
                    break;
                }
            }
            let Some((f1, ts, cs, r1, cols)) = accepted else { break };
            for (j, ((t, c), phi)) in ts.into_iter().zip(cs).zip(cols).enumerate() {
                moved = moved.max(self.chart_distance(t, self.atoms[j].t));
                let a = &mut self.atoms[j];
                a.t = t;
                a.c = c;
                a.phi = phi;
            }
            self.r = r1;
            if f0 - f1 <= 1e-16 * f0.abs() {
                break;
            }
        }
        moved
    }

    pub fn dual_point(&self) -> GeneralizedPolynomial {
        GeneralizedPolynomial {
            family: self.fam,
            coefficients: self.r.iter().map(|v| v / self.lambda).collect(),
        }
    }

    /// Adds violated local maxima of the dual polynomial as new atoms.
    /// Returns the number added.
    pub fn exchange(&mut self, dual: &GeneralizedPolynomial, grid: usize) -> usize {
        let tol = 1e-12 * self.fam.chart_range().1;
        let peaks = local_maxima(dual, grid, 1.0, tol);
        let Some(vmax) = peaks.iter().map(|p| p.value).reduce(f64::max) else {
            return 0;
        };
        if vmax <= 1.0 {
            return 0;
        }
        let cut = 1.0 + 0.5 * (vmax - 1.0);
        let mut cands: Vec<_> = peaks.into_iter().filter(|p| p.value > 1.0).collect();
        cands.sort_by(|a, b| b.value.total_cmp(&a.value));
        for exclusion in [self.window, self.window / 16.0] {
            let mut added: Vec<f64> = Vec::new();
            for p in &cands {
                if p.value < cut && !added.is_empty() {
                    continue;
                }
                let clear = self
                    .atoms
                    .iter()
                    .map(|a| a.t)
                    .chain(added.iter().copied())
                    .all(|t| self.chart_distance(t, p.chart) > exclusion);
                if clear {
                    added.push(p.chart);
                }
            }
            if !added.is_empty() {
                let n = added.len();
                for t in added {
                    self.add_atom(t);
                }
                return n;
            }
        }
        0
    }
}

/// `D(a) = λ Re⟨y, a⟩ − λ²‖a‖²/2`.
pub fn dual_objective(y: &[Complex64], a: &[Complex64], lambda: f64) -> f64 {
    lambda * inner(y, a).re - 0.5 * lambda * lambda * norm2(a).powi(2)
}

/// Certified sup norm of a candidate dual point.
pub(crate) fn certify(p: &GeneralizedPolynomial, grid: usize) -> crate::Result<SupBound> {
    sup_norm_refined(p, grid, 1e-11, 400_000)
}
