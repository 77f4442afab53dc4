//! Brute-force grid LASSO, used as an independent check on [`super::solve`].

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{domain_err, Error, Result};
use crate::family::{inner, norm2, MeasurementFamily, SampleVector};
use crate::grid::ChartGrid;
use crate::measure::DiscreteMeasure;

const MAX_ITERS: usize = 2_000_000;
const ADD_PER_PASS: usize = 16;

#[derive(Debug, Clone)]
pub struct OracleResult {
    /// Nonzero grid atoms.
    pub measure: DiscreteMeasure,
    pub objective: f64,
    /// Relative duality gap of the grid problem at exit.
    pub gap: f64,
    pub iterations: usize,
}

enum Operator {
    Fft {
        fc: usize,
        len: usize,
        fwd: Arc<dyn Fft<f64>>,
        inv: Arc<dyn Fft<f64>>,
    },
    /// `(m + 1) × G`, row-major.
    Dense { rows: usize, cols: usize, phi: Vec<f64> },
}

impl Operator {
    /// `Φc = Σ_g c_g φ(x_g)`.
    fn apply(&self, c: &[Complex64]) -> Vec<Complex64> {
        match self {
            Self::Fft { fc, len, inv, .. } => {
                let mut buf = c.to_vec();
                inv.process(&mut buf);
                let fc = *fc as i64;
                (-fc..=fc).map(|k| buf[k.rem_euclid(*len as i64) as usize]).collect()
            }
            Self::Dense { rows, cols, phi } => (0..*rows)
                .map(|k| phi[k * cols..(k + 1) * cols].iter().zip(c).map(|(p, v)| v * p).sum())
                .collect(),
        }
    }

    /// `(Φ^H r)_g = ⟨φ(x_g), r⟩`.
    fn adjoint(&self, r: &[Complex64]) -> Vec<Complex64> {
        match self {
            Self::Fft { fc, len, fwd, .. } => {
                let mut buf = vec![Complex64::new(0.0, 0.0); *len];
                let fc_i = *fc as i64;
                for (i, v) in r.iter().enumerate() {
                    buf[(i as i64 - fc_i).rem_euclid(*len as i64) as usize] += v;
                }
                fwd.process(&mut buf);
                buf
            }
            Self::Dense { rows, cols, phi } => {
                let mut out = vec![Complex64::new(0.0, 0.0); *cols];
                for k in 0..*rows {
                    let row = &phi[k * cols..(k + 1) * cols];
                    for (o, p) in out.iter_mut().zip(row) {
                        *o += r[k] * p;
                    }
                }
                out
            }
        }
    }
}

/// Accelerated proximal gradient on the atoms in `work`, warm-started from
/// `x`, until the gap of the restricted problem is below `tol`. Keeps `r`
/// equal to `y − Φx` and returns the iteration count.
fn fista_on_working_set(
    work: &[(usize, Vec<Complex64>, f64)],
    y: &[Complex64],
    lambda: f64,
    tol: f64,
    budget: usize,
    x: &mut [Complex64],
    r: &mut Vec<Complex64>,
) -> usize {
    let rows = y.len();
    let k = work.len();
    if k == 0 || budget == 0 {
        return 0;
    }
    let a = DMatrix::from_fn(rows, k, |i, j| work[j].1[i]);
    let top = (&a * a.adjoint())
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(0.0f64, f64::max);
    let lip = top * (1.0 + 1e-10) + f64::MIN_POSITIVE;
    let thresh = lambda / lip;
    let yv = DVector::from_column_slice(y);
    let zero = Complex64::new(0.0, 0.0);
    let mut xw = DVector::from_fn(k, |j, _| x[work[j].0]);
    let mut z = xw.clone();
    let mut tk = 1.0f64;
    let mut used = 0;
    let residual = |v: &DVector<Complex64>| &yv - &a * v;
    while used < budget {
        used += 1;
        let grad = a.adjoint() * (&a * &z - &yv);
        let xn = DVector::from_fn(k, |j, _| {
            let v = z[j] - grad[j] / lip;
            let m = v.norm();
            if m <= thresh {
                zero
            } else {
                v * (1.0 - thresh / m)
            }
        });
        let restart = (&z - &xn).dotc(&(&xn - &xw)).re;
        if restart > 0.0 {
            tk = 1.0;
            z = xn.clone();
        } else {
            let tn = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
            z = &xn + (&xn - &xw) * Complex64::new((tk - 1.0) / tn, 0.0);
            tk = tn;
        }
        xw = xn;
        if used % 25 == 0 || used == budget {
            let rv = residual(&xw);
            let corr = (a.adjoint() * &rv).iter().map(|v| v.norm()).fold(0.0f64, f64::max);
            let rs = rv.as_slice();
            let primal = 0.5 * rv.norm_squared() + lambda * xw.iter().map(|v| v.norm()).sum::<f64>();
            if relative_gap(y, rs, primal, corr, lambda) <= tol {
                break;
            }
        }
    }
    for (j, (g, _, _)) in work.iter().enumerate() {
        x[*g] = xw[j];
    }
    *r = residual(&xw).as_slice().to_vec();
    used
}

/// `½‖r‖² + λ‖x‖₁`.
fn objective_at(r: &[Complex64], x: &[Complex64], lambda: f64) -> f64 {
    0.5 * norm2(r).powi(2) + lambda * x.iter().map(|v| v.norm()).sum::<f64>()
}

/// Relative duality gap for residual `r`, using the feasible dual point
/// `r / max(λ, corr_max)` of the problem whose atoms give `corr_max`.
fn relative_gap(y: &[Complex64], r: &[Complex64], primal: f64, corr_max: f64, lambda: f64) -> f64 {
    let scale = lambda * (corr_max / lambda).max(1.0);
    let a: Vec<Complex64> = r.iter().map(|v| v / scale).collect();
    let dual = lambda * inner(y, &a).re - 0.5 * lambda * lambda * norm2(&a).powi(2);
    (primal - dual).max(0.0) / (1.0 + primal.abs())
}

/// Solves the LASSO over atoms fixed at every node of a chart grid of
/// `grid_size` points, to relative duality gap `tol`. Coordinate descent
/// runs on a working set that grows by the grid nodes violating `|Φ^H r| ≤ λ`;
/// the stopping gap is always measured over the whole grid.
pub fn grid_lasso_oracle(
    fam: MeasurementFamily,
    y: &SampleVector,
    lambda: f64,
    grid_size: usize,
    tol: f64,
) -> Result<OracleResult> {
    if grid_size < 32 * fam.size() {
        return domain_err(format!(
            "oracle grid of {grid_size} points is below 32 × family size = {}",
            32 * fam.size()
        ));
    }
    if y.family != fam {
        return domain_err("samples belong to a different family");
    }
    if !(lambda > 0.0) || !(tol > 0.0) {
        return domain_err("λ and tol must be positive");
    }
    let grid = ChartGrid::new(fam, grid_size);
    let points = grid.points();
    let op = match fam {
        MeasurementFamily::Fourier { fc } => {
            let mut planner = FftPlanner::new();
            Operator::Fft {
                fc,
                len: grid_size,
                fwd: planner.plan_fft_forward(grid_size),
                inv: planner.plan_fft_inverse(grid_size),
            }
        }
        MeasurementFamily::Chebyshev { .. } => {
            let rows = fam.size();
            let cols = grid_size;
            let mut phi = vec![0.0; rows * cols];
            for (g, &x) in points.iter().enumerate() {
                for (k, b) in fam.basis(x).into_iter().enumerate() {
                    phi[k * cols + g] = b.re;
                }
            }
            Operator::Dense { rows, cols, phi }
        }
    };

    let zero = Complex64::new(0.0, 0.0);
    let mut x = vec![zero; grid_size];
    let mut r = y.values.clone();
    // working set: grid index, its column and squared norm
    let mut work: Vec<(usize, Vec<Complex64>, f64)> = Vec::new();
    let mut in_work = vec![false; grid_size];
    let mut sweeps = 0usize;
    let mut gap;
    loop {
        let corr = op.adjoint(&r);
        let corr_max = corr.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
        let primal = objective_at(&r, &x, lambda);
        gap = relative_gap(&y.values, &r, primal, corr_max, lambda);
        if gap <= tol {
            let measure = DiscreteMeasure::from_complex(fam.domain(), &points, &x, 0.0)?;
            return Ok(OracleResult {
                measure,
                objective: primal,
                gap,
                iterations: sweeps,
            });
        }
        if sweeps >= MAX_ITERS {
            break;
        }
        let mut violators: Vec<(f64, usize)> = corr
            .iter()
            .enumerate()
            .filter(|&(g, v)| !in_work[g] && v.norm() > lambda)
            .map(|(g, v)| (v.norm(), g))
            .collect();
        violators.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, g) in violators.iter().take(ADD_PER_PASS) {
            let mut unit = vec![zero; grid_size];
            unit[g] = Complex64::new(1.0, 0.0);
            let col = op.apply(&unit);
            let nsq = norm2(&col).powi(2);
            in_work[g] = true;
            work.push((g, col, nsq));
        }
        sweeps += fista_on_working_set(&work, &y.values, lambda, 0.1 * tol, MAX_ITERS - sweeps, &mut x, &mut r);
    }
    Err(Error::Numerical {
        message: format!("grid LASSO did not reach gap {tol} in {MAX_ITERS} iterations"),
        last_gap: Some(gap),
    })
}
