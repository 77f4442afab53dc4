//! C interface to the spike solver.
//!
//! Every fallible function returns an [`SsStatus`]; on failure a message is
//! kept per thread and can be read with [`ss_last_error_message`]. Measures
//! and solve results are opaque handles owned by the caller, released with
//! the matching `_free` function. Nothing here panics across the boundary.

use std::cell::RefCell;
use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use num_complex::Complex64;
use spikesolve::certificate::{construct_fourier_certificate_with, verify_qic, CertificateOptions, QicConstants};
use spikesolve::experiment::calibrated_lambda;
use spikesolve::solver::{solve, SolveResult, SolverConfig};
use spikesolve::{forward, DiscreteMeasure, Domain, Error, MeasurementFamily, SampleVector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// A precondition of a guarantee-backed routine does not hold.
    Precondition = 3,
    /// No convergence, or a singular system.
    Numerical = 4,
    Panic = 5,
}

/// Frequencies `-f_c..=f_c` on the circle `[0, 1)`.
pub const SS_FAMILY_FOURIER: u32 = 0;
/// Orthonormal Chebyshev polynomials of degree `0..=m` on `[-1, 1]`.
pub const SS_FAMILY_CHEBYSHEV: u32 = 1;

/// A measurement family: `kind` is one of the `SS_FAMILY_*` constants,
/// `order` is `f_c` for Fourier and `m` for Chebyshev.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SsFamily {
    pub kind: u32,
    pub order: usize,
}

/// One atom `amplitude · e^{i phase} δ_location`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SsAtom {
    pub location: f64,
    pub amplitude: f64,
    pub phase: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SsCertificateReport {
    pub passed: bool,
    pub c_a: f64,
    pub c_b: f64,
    pub phase_residual: f64,
    pub qic_margin: f64,
    pub grid_size: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SsSolveSummary {
    pub lambda: f64,
    pub lambda_effective: f64,
    pub objective: f64,
    pub dual_objective: f64,
    pub gap: f64,
    pub optimality_passed: bool,
    pub cond1_value: f64,
    pub cond2_residual: f64,
    pub atoms: usize,
}

/// Opaque discrete measure.
pub struct SsMeasure(DiscreteMeasure);

/// Opaque solver output.
pub struct SsSolveResult(SolveResult);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Fail(SsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Precondition(_) => SsStatus::Precondition,
            Error::Numerical { .. } => SsStatus::Numerical,
            _ => SsStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(SsStatus::InvalidArgument, msg.into())
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            SsStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SsStatus::Panic
        }
    }
}

fn nonnull<T>(p: *const T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(SsStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null-checked and point to `len` readable values.
unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    nonnull(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

fn family(f: SsFamily) -> Result<MeasurementFamily, Fail> {
    Ok(match f.kind {
        SS_FAMILY_FOURIER => MeasurementFamily::fourier(f.order)?,
        SS_FAMILY_CHEBYSHEV => MeasurementFamily::chebyshev(f.order)?,
        k => return Err(invalid(format!("unknown family kind {k}"))),
    })
}

fn domain(kind: u32) -> Result<Domain, Fail> {
    match kind {
        SS_FAMILY_FOURIER => Ok(Domain::Circle),
        SS_FAMILY_CHEBYSHEV => Ok(Domain::Interval),
        k => Err(invalid(format!("unknown family kind {k}"))),
    }
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ss_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated to
/// `capacity - 1` bytes and NUL-terminated) and returns its full length.
/// Pass a null `buf` to query the length only.
///
/// # Safety
/// `buf` must be null or valid for `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn ss_last_error_message(buf: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && capacity > 0 {
            let n = msg.len().min(capacity - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Number of samples `m + 1` of a family.
///
/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ss_family_size(fam: SsFamily, out: *mut usize) -> SsStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = family(fam)?.size();
        Ok(())
    })
}

/// Builds a measure on the domain of family `kind` from `count` atoms.
///
/// # Safety
/// `atoms` must point to `count` atoms; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ss_measure_new(
    kind: u32,
    atoms: *const SsAtom,
    count: usize,
    out: *mut *mut SsMeasure,
) -> SsStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = ptr::null_mut();
        let atoms = slice(atoms, count, "atoms")?;
        let mu = DiscreteMeasure::new(domain(kind)?, atoms.iter().map(|a| (a.location, a.amplitude, a.phase)))?;
        *out = Box::into_raw(Box::new(SsMeasure(mu)));
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_measure_free(m: *mut SsMeasure) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Atom count; 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_measure_len(m: *const SsMeasure) -> usize {
    m.as_ref().map_or(0, |m| m.0.len())
}

/// Copies the atoms into `out`, in insertion order with phases reduced to
/// `[0, 2π)`.
///
/// # Safety
/// `m` must be a live handle and `out` valid for `capacity` atoms.
#[no_mangle]
pub unsafe extern "C" fn ss_measure_atoms(m: *const SsMeasure, out: *mut SsAtom, capacity: usize) -> SsStatus {
    guard(|| {
        nonnull(m, "measure")?;
        let atoms = (*m).0.atoms();
        if capacity < atoms.len() {
            return Err(invalid(format!("buffer holds {capacity} atoms, measure has {}", atoms.len())));
        }
        if !atoms.is_empty() {
            nonnull(out, "out")?;
        }
        for (i, a) in atoms.iter().enumerate() {
            *out.add(i) = SsAtom {
                location: a.location,
                amplitude: a.amplitude,
                phase: a.phase,
            };
        }
        Ok(())
    })
}

/// Moments of `m` in family `fam`, written as separate real and imaginary
/// parts of length `len = ss_family_size(fam)`.
///
/// # Safety
/// `m` must be a live handle; `re` and `im` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ss_forward(
    m: *const SsMeasure,
    fam: SsFamily,
    re: *mut f64,
    im: *mut f64,
    len: usize,
) -> SsStatus {
    guard(|| {
        nonnull(m, "measure")?;
        nonnull(re, "re")?;
        nonnull(im, "im")?;
        let f = family(fam)?;
        if len != f.size() {
            return Err(invalid(format!("family has {} samples, buffers hold {len}", f.size())));
        }
        let y = forward(&(*m).0, f)?;
        for (i, v) in y.values.iter().enumerate() {
            *re.add(i) = v.re;
            *im.add(i) = v.im;
        }
        Ok(())
    })
}

/// The noise-calibrated regularization level for noise level `sigma`.
///
/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ss_lambda(fam: SsFamily, sigma: f64, out: *mut f64) -> SsStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = calibrated_lambda(family(fam)?, sigma)?;
        Ok(())
    })
}

/// Solves the BLASSO for samples `re + i·im` at level `lambda` with the
/// default solver settings.
///
/// # Safety
/// `re` and `im` must hold `len` doubles; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ss_solve(
    fam: SsFamily,
    re: *const f64,
    im: *const f64,
    len: usize,
    lambda: f64,
    out: *mut *mut SsSolveResult,
) -> SsStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = ptr::null_mut();
        let f = family(fam)?;
        let re = slice(re, len, "re")?;
        let im = slice(im, len, "im")?;
        let values: Vec<Complex64> = re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect();
        let y = SampleVector::new(f, values)?;
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid(format!("lambda must be positive, got {lambda}")));
        }
        let res = solve(f, &y, &SolverConfig::new(f, lambda))?;
        *out = Box::into_raw(Box::new(SsSolveResult(res)));
        Ok(())
    })
}

/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_solve_result_free(r: *mut SsSolveResult) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// # Safety
/// `r` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ss_solve_result_summary(r: *const SsSolveResult, out: *mut SsSolveSummary) -> SsStatus {
    guard(|| {
        nonnull(r, "result")?;
        nonnull(out, "out")?;
        let r = &(*r).0;
        *out = SsSolveSummary {
            lambda: r.optimality.lambda,
            lambda_effective: r.lambda_effective,
            objective: r.objective,
            dual_objective: r.dual_objective,
            gap: r.gap,
            optimality_passed: r.optimality.passed,
            cond1_value: r.optimality.cond1_value,
            cond2_residual: r.optimality.cond2_residual,
            atoms: r.measure.len(),
        };
        Ok(())
    })
}

/// The recovered measure as a new handle.
///
/// # Safety
/// `r` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ss_solve_result_measure(r: *const SsSolveResult, out: *mut *mut SsMeasure) -> SsStatus {
    guard(|| {
        nonnull(r, "result")?;
        nonnull(out, "out")?;
        *out = Box::into_raw(Box::new(SsMeasure((*r).0.measure.clone())));
        Ok(())
    })
}

/// The dual polynomial `P̂(x)`.
///
/// # Safety
/// `r` must be a live handle; `re` and `im` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ss_solve_result_dual_eval(
    r: *const SsSolveResult,
    x: f64,
    re: *mut f64,
    im: *mut f64,
) -> SsStatus {
    guard(|| {
        nonnull(r, "result")?;
        nonnull(re, "re")?;
        nonnull(im, "im")?;
        let v = (*r).0.dual_coefficients.eval(x);
        *re = v.re;
        *im = v.im;
        Ok(())
    })
}

/// Builds the Fourier dual certificate interpolating the phases of `m` and
/// verifies isolation with constants `(c_a, c_b)` on a grid of `grid`
/// points (0 picks `64·(2 f_c + 1)`). A failed check is reported through
/// `out.passed`, not the status.
///
/// # Safety
/// `m` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn ss_certify_fourier(
    m: *const SsMeasure,
    fc: usize,
    c_a: f64,
    c_b: f64,
    grid: usize,
    out: *mut SsCertificateReport,
) -> SsStatus {
    guard(|| {
        nonnull(m, "measure")?;
        nonnull(out, "out")?;
        let mu = &(*m).0;
        if mu.domain() != Domain::Circle {
            return Err(invalid("certificates are built for measures on the circle"));
        }
        let q = QicConstants::new(c_a, c_b)?;
        let support = mu.locations();
        let phases: Vec<f64> = mu.atoms().iter().map(|a| a.phase).collect();
        let opts = CertificateOptions {
            require_large_cutoff: false,
        };
        let p = construct_fourier_certificate_with(&support, &phases, fc, opts)?;
        let grid = if grid == 0 { 64 * (2 * fc + 1) } else { grid };
        let rep = verify_qic(&p, &support, &phases, q, grid)?;
        *out = SsCertificateReport {
            passed: rep.passed,
            c_a: rep.constants.c_a,
            c_b: rep.constants.c_b,
            phase_residual: rep.phase_residual,
            qic_margin: rep.qic_margin,
            grid_size: rep.grid_size,
        };
        Ok(())
    })
}
