//! Uniform chart grids, certified sup-norm bounds and peak refinement.
//!
//! A cell `[t_i, t_{i+1}]` of width `h` is bounded through `g = |f|²`, which is
//! a trigonometric polynomial of bandwidth `2ω` with `|g''| ≤ 4ω²‖f‖²∞`.
//! Comparing `g` with its chord on the cell gives
//! `max_cell g ≤ max(g_i, g_{i+1}) + ω²h²‖f‖²∞/2`, which is second order in
//! `h`. The first-order Bernstein inflation `|f| ≤ |f_i| + (h/2)ω‖f‖∞` is also
//! computed and the tighter of the two is reported.

use std::cell::RefCell;
use std::collections::BinaryHeap;
use std::cmp::Ordering;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{domain_err, Result};
use crate::family::{GeneralizedPolynomial, MeasurementFamily, TrigSeries};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Nodes of a uniform grid in the chart parameter.
#[derive(Debug, Clone, Copy)]
pub struct ChartGrid {
    pub family: MeasurementFamily,
    pub nodes: usize,
}

impl ChartGrid {
    pub fn new(family: MeasurementFamily, nodes: usize) -> Self {
        Self { family, nodes }
    }

    pub fn spacing(&self) -> f64 {
        let (lo, hi) = self.family.chart_range();
        if self.family.chart_is_periodic() {
            (hi - lo) / self.nodes as f64
        } else {
            (hi - lo) / (self.nodes - 1) as f64
        }
    }

    pub fn node(&self, i: usize) -> f64 {
        self.family.chart_range().0 + i as f64 * self.spacing()
    }

    /// Number of cells: `nodes` on the circle (one wraps), `nodes - 1` otherwise.
    pub fn cells(&self) -> usize {
        if self.family.chart_is_periodic() {
            self.nodes
        } else {
            self.nodes - 1
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.nodes).map(|i| self.family.chart_to_point(self.node(i))).collect()
    }

    /// Values of a chart series at every node, by one FFT.
    pub fn evaluate(&self, series: &TrigSeries) -> Vec<Complex64> {
        let len = if self.family.chart_is_periodic() {
            self.nodes
        } else {
            2 * (self.nodes - 1)
        };
        let mut buf = vec![Complex64::new(0.0, 0.0); len];
        let j0 = series.half_width as i64;
        for (i, c) in series.coeffs.iter().enumerate() {
            let j = (i as i64 - j0).rem_euclid(len as i64) as usize;
            buf[j] += c;
        }
        PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len).process(&mut buf));
        buf.truncate(self.nodes);
        buf
    }
}

/// Rigorous two-sided bound on `‖P‖∞`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SupBound {
    pub lower: f64,
    pub upper: f64,
    /// Point where the lower bound is attained.
    pub argmax: f64,
}

fn l1(series: &TrigSeries) -> f64 {
    series.coeffs.iter().map(|c| c.norm()).sum()
}

/// A priori bound `M ≥ ‖f‖∞` from the grid maximum `g_max` of `|f|` on a grid
/// of spacing `h`.
fn self_consistent_sup(g_max: f64, omega: f64, h: f64, series: &TrigSeries) -> f64 {
    let mut best = l1(series);
    let wh = omega * h;
    if wh < 2.0 {
        best = best.min(g_max / (1.0 - wh / 2.0));
    }
    if wh * wh < 2.0 {
        best = best.min(g_max / (1.0 - wh * wh / 2.0).sqrt());
    }
    best.max(g_max)
}

/// Grid maximum of `|P|` and a certified upper bound on `‖P‖∞`.
pub fn sup_norm_certified(p: &GeneralizedPolynomial, grid_size: usize) -> Result<SupBound> {
    let fam = p.family;
    if grid_size < 4 * fam.size() {
        return domain_err(format!(
            "grid of {grid_size} points is too coarse; need at least {}",
            4 * fam.size()
        ));
    }
    let grid = ChartGrid::new(fam, grid_size);
    let series = p.chart_series();
    let values = grid.evaluate(&series);
    let (imax, g_max) = values
        .iter()
        .map(|v| v.norm())
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("grid is nonempty");
    let h = grid.spacing();
    let omega = series.bandwidth();
    let m = self_consistent_sup(g_max, omega, h, &series);
    Ok(SupBound {
        lower: g_max,
        upper: m,
        argmax: fam.chart_to_point(grid.node(imax)),
    })
}

#[derive(Debug)]
struct Cell {
    bound: f64,
    lo: f64,
    hi: f64,
    g_lo: f64,
    g_hi: f64,
}

impl PartialEq for Cell {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound
    }
}
impl Eq for Cell {}
impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Cell {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound.total_cmp(&other.bound)
    }
}

/// Like [`sup_norm_certified`], then bisects every cell whose bound exceeds
/// `lower·(1 + rel_tol)` until the two sides agree or `max_evals` extra
/// evaluations have been spent. The result is rigorous either way.
pub fn sup_norm_refined(
    p: &GeneralizedPolynomial,
    grid_size: usize,
    rel_tol: f64,
    max_evals: usize,
) -> Result<SupBound> {
    let coarse = sup_norm_certified(p, grid_size)?;
    let fam = p.family;
    let grid = ChartGrid::new(fam, grid_size);
    let series = p.chart_series();
    let omega = series.bandwidth();
    let m2 = coarse.upper * coarse.upper;
    let values: Vec<f64> = grid.evaluate(&series).iter().map(|v| v.norm_sqr()).collect();
    let cell_bound = |w: f64, a: f64, b: f64| (a.max(b) + omega * omega * w * w * m2 / 2.0).sqrt();

    let mut lower = coarse.lower;
    let mut argmax_t = fam.point_to_chart(coarse.argmax);
    let mut heap = BinaryHeap::new();
    let h = grid.spacing();
    for i in 0..grid.cells() {
        let j = (i + 1) % grid.nodes;
        let (lo, hi) = (grid.node(i), grid.node(i) + h);
        let bound = cell_bound(h, values[i], values[j]);
        heap.push(Cell {
            bound,
            lo,
            hi,
            g_lo: values[i],
            g_hi: values[j],
        });
    }
    let mut evals = 0;
    let mut settled = 0.0f64;
    while let Some(cell) = heap.pop() {
        if cell.bound <= lower * (1.0 + rel_tol) || evals >= max_evals {
            settled = settled.max(cell.bound);
            break;
        }
        let mid = 0.5 * (cell.lo + cell.hi);
        let g_mid = series.eval(mid).norm_sqr();
        evals += 1;
        if g_mid.sqrt() > lower {
            lower = g_mid.sqrt();
            argmax_t = mid;
        }
        let w = 0.5 * (cell.hi - cell.lo);
        heap.push(Cell {
            bound: cell_bound(w, cell.g_lo, g_mid),
            lo: cell.lo,
            hi: mid,
            g_lo: cell.g_lo,
            g_hi: g_mid,
        });
        heap.push(Cell {
            bound: cell_bound(w, g_mid, cell.g_hi),
            lo: mid,
            hi: cell.hi,
            g_lo: g_mid,
            g_hi: cell.g_hi,
        });
    }
    // the heap is ordered, so the first unresolved cell dominates the rest
    let upper = settled.max(lower).min(coarse.upper);
    Ok(SupBound {
        lower,
        upper,
        argmax: fam.chart_to_point(argmax_t),
    })
}

/// A refined local maximum of `|P|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub location: f64,
    pub chart: f64,
    pub value: f64,
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section maximization of `f` on `[a, b]` down to width `tol`.
pub fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc > fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Local maxima of `|P|` on a grid with value at least `threshold`, each
/// refined by golden-section search in its bracketing cells to `tol`.
/// Peaks closer than `tol` are merged, keeping the larger one.
pub fn local_maxima(p: &GeneralizedPolynomial, grid_size: usize, threshold: f64, tol: f64) -> Vec<Peak> {
    let fam = p.family;
    let grid = ChartGrid::new(fam, grid_size.max(3));
    let series = p.chart_series();
    let vals: Vec<f64> = grid.evaluate(&series).iter().map(|v| v.norm()).collect();
    let n = grid.nodes;
    let periodic = fam.chart_is_periodic();
    let h = grid.spacing();
    let (t_lo, t_hi) = fam.chart_range();
    let vmax = vals.iter().cloned().fold(0.0f64, f64::max);
    let omega = series.bandwidth();
    let m = self_consistent_sup(vmax, omega, h, &series);
    let slack = omega * omega * h * h * m * m / 2.0;
    let mut peaks: Vec<Peak> = Vec::new();
    for i in 0..n {
        let left = if i > 0 {
            Some(vals[i - 1])
        } else if periodic {
            Some(vals[n - 1])
        } else {
            None
        };
        let right = if i + 1 < n {
            Some(vals[i + 1])
        } else if periodic {
            Some(vals[0])
        } else {
            None
        };
        let is_max = left.is_none_or(|l| vals[i] >= l) && right.is_none_or(|r| vals[i] > r);
        // a grid value can only rise to the threshold within the cell slack
        if !is_max || vals[i] * vals[i] + slack < threshold * threshold {
            continue;
        }
        let t = grid.node(i);
        let (mut a, mut b) = (t - h, t + h);
        if !periodic {
            a = a.max(t_lo);
            b = b.min(t_hi);
        }
        let (mut tbest, mut vbest) = golden_section_max(|s| series.eval(s).norm(), a, b, tol);
        if vals[i] > vbest {
            tbest = t;
            vbest = vals[i];
        }
        // closed charts: the maximum may sit on the boundary
        if !periodic {
            for edge in [t_lo, t_hi] {
                if (edge - tbest).abs() <= h {
                    let v = series.eval(edge).norm();
                    if v > vbest {
                        tbest = edge;
                        vbest = v;
                    }
                }
            }
        }
        if vbest >= threshold {
            peaks.push(Peak {
                location: fam.chart_to_point(tbest),
                chart: if periodic { tbest.rem_euclid(t_hi) } else { tbest },
                value: vbest,
            });
        }
    }
    merge_peaks(peaks, fam, tol)
}

fn merge_peaks(mut peaks: Vec<Peak>, fam: MeasurementFamily, tol: f64) -> Vec<Peak> {
    // larger first so that a merge keeps the larger peak
    peaks.sort_by(|a, b| b.value.total_cmp(&a.value));
    let dom = fam.domain();
    let mut kept: Vec<Peak> = Vec::new();
    for p in peaks {
        if kept.iter().all(|k| dom.distance(k.location, p.location) > tol) {
            kept.push(p);
        }
    }
    kept.sort_by(|a, b| a.location.total_cmp(&b.location));
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dirichlet(fc: usize) -> GeneralizedPolynomial {
        let f = MeasurementFamily::fourier(fc).unwrap();
        GeneralizedPolynomial::new(f, vec![Complex64::new(1.0, 0.0); f.size()]).unwrap()
    }

    #[test]
    fn fft_grid_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for fam in [MeasurementFamily::fourier(5).unwrap(), MeasurementFamily::chebyshev(7).unwrap()] {
            let coeffs = (0..fam.size())
                .map(|_| Complex64::new(rng.random::<f64>(), rng.random::<f64>()))
                .collect();
            let p = GeneralizedPolynomial::new(fam, coeffs).unwrap();
            let grid = ChartGrid::new(fam, 64);
            let vals = grid.evaluate(&p.chart_series());
            for (i, x) in grid.points().into_iter().enumerate() {
                assert!((vals[i] - p.eval(x)).norm() < 1e-11);
            }
        }
    }

    #[test]
    fn zero_polynomial_has_zero_sup() {
        let p = GeneralizedPolynomial::zero(MeasurementFamily::fourier(3).unwrap());
        let b = sup_norm_certified(&p, 64).unwrap();
        assert_eq!((b.lower, b.upper), (0.0, 0.0));
    }

    #[test]
    fn constant_polynomial_is_tight() {
        let fam = MeasurementFamily::chebyshev(4).unwrap();
        let mut c = vec![Complex64::new(0.0, 0.0); fam.size()];
        c[0] = Complex64::new(0.0, -2.5);
        let p = GeneralizedPolynomial::new(fam, c).unwrap();
        let b = sup_norm_certified(&p, 40).unwrap();
        assert!((b.lower - 2.5).abs() < 1e-14);
        assert!(b.upper >= b.lower && b.upper <= 2.5 + 1e-12);
    }

    #[test]
    fn coarse_grid_is_rejected() {
        assert!(sup_norm_certified(&dirichlet(4), 35).is_err());
    }

    #[test]
    fn dirichlet_bound_brackets_dense_oracle() {
        let p = dirichlet(16);
        let b = sup_norm_certified(&p, 4096).unwrap();
        // dense oracle: 10^6 points
        let dense = (0..1_000_000)
            .map(|i| p.eval(i as f64 / 1e6).norm())
            .fold(0.0f64, f64::max);
        assert!((32.9..=33.0 + 1e-9).contains(&b.lower), "{b:?}");
        assert!(b.lower <= dense + 1e-9 && dense <= b.upper);
        assert!(b.upper - b.lower <= 0.5);
    }

    #[test]
    fn refinement_tightens_the_bound() {
        let fam = MeasurementFamily::fourier(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let coeffs = (0..fam.size())
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let p = GeneralizedPolynomial::new(fam, coeffs).unwrap();
        let coarse = sup_norm_certified(&p, 4 * fam.size()).unwrap();
        let fine = sup_norm_refined(&p, 4 * fam.size(), 1e-10, 100_000).unwrap();
        assert!(fine.upper <= coarse.upper && fine.lower >= coarse.lower);
        assert!(fine.upper - fine.lower <= 1e-9 * fine.upper);
        let dense = (0..200_000).map(|i| p.eval(i as f64 / 2e5).norm()).fold(0.0f64, f64::max);
        assert!(dense <= fine.upper && dense >= fine.lower - 1e-6);
    }

    #[test]
    fn local_maxima_finds_shifted_peak() {
        // P(x) = D(x - 0.3137) has its single global maximum at 0.3137
        let fam = MeasurementFamily::fourier(10).unwrap();
        let expansion: Vec<Complex64> = (0..fam.size())
            .map(|i| Complex64::from_polar(1.0, -std::f64::consts::TAU * fam.index_label(i) as f64 * 0.3137))
            .collect();
        let p = GeneralizedPolynomial::from_expansion(fam, &expansion).unwrap();
        let peaks = local_maxima(&p, 8 * fam.size(), 20.0, 1e-10);
        assert_eq!(peaks.len(), 1);
        assert!((peaks[0].location - 0.3137).abs() < 1e-8);
        assert!((peaks[0].value - 21.0).abs() < 1e-9);
    }

    #[test]
    fn golden_section_on_parabola() {
        let (x, v) = golden_section_max(|t| -(t - 0.25).powi(2), 0.0, 1.0, 1e-10);
        assert!((x - 0.25).abs() < 1e-9 && v <= 0.0);
    }
}
