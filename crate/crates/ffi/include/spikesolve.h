#ifndef SPIKESOLVE_H
#define SPIKESOLVE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Frequencies `-f_c..=f_c` on the circle `[0, 1)`.
#define SS_FAMILY_FOURIER 0

// Orthonormal Chebyshev polynomials of degree `0..=m` on `[-1, 1]`.
#define SS_FAMILY_CHEBYSHEV 1

typedef enum SsStatus {
  SS_STATUS_OK = 0,
  SS_STATUS_NULL_POINTER = 1,
  SS_STATUS_INVALID_ARGUMENT = 2,
  // A precondition of a guarantee-backed routine does not hold.
  SS_STATUS_PRECONDITION = 3,
  // No convergence, or a singular system.
  SS_STATUS_NUMERICAL = 4,
  SS_STATUS_PANIC = 5,
} SsStatus;

// Opaque discrete measure.
typedef struct SsMeasure SsMeasure;

// Opaque solver output.
typedef struct SsSolveResult SsSolveResult;

// A measurement family: `kind` is one of the `SS_FAMILY_*` constants,
// `order` is `f_c` for Fourier and `m` for Chebyshev.
typedef struct SsFamily {
  uint32_t kind;
  uintptr_t order;
} SsFamily;

// One atom `amplitude · e^{i phase} δ_location`.
typedef struct SsAtom {
  double location;
  double amplitude;
  double phase;
} SsAtom;

typedef struct SsSolveSummary {
  double lambda;
  double lambda_effective;
  double objective;
  double dual_objective;
  double gap;
  bool optimality_passed;
  double cond1_value;
  double cond2_residual;
  uintptr_t atoms;
} SsSolveSummary;

typedef struct SsCertificateReport {
  bool passed;
  double c_a;
  double c_b;
  double phase_residual;
  double qic_margin;
  uintptr_t grid_size;
} SsCertificateReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static NUL-terminated string.
const char *ss_version(void);

// Copies the calling thread's last error message into `buf` (truncated to
// `capacity - 1` bytes and NUL-terminated) and returns its full length.
// Pass a null `buf` to query the length only.
//
// # Safety
// `buf` must be null or valid for `capacity` bytes.
uintptr_t ss_last_error_message(char *buf, uintptr_t capacity);

// Number of samples `m + 1` of a family.
//
// # Safety
// `out` must be valid for a write.
enum SsStatus ss_family_size(struct SsFamily fam, uintptr_t *out);

// Builds a measure on the domain of family `kind` from `count` atoms.
//
// # Safety
// `atoms` must point to `count` atoms; `out` must be valid for a write.
enum SsStatus ss_measure_new(uint32_t kind,
                             const struct SsAtom *atoms,
                             uintptr_t count,
                             struct SsMeasure **out);

// # Safety
// `m` must be null or a handle from this library not yet freed.
void ss_measure_free(struct SsMeasure *m);

// Atom count; 0 for a null handle.
//
// # Safety
// `m` must be null or a live handle.
uintptr_t ss_measure_len(const struct SsMeasure *m);

// Copies the atoms into `out`, in insertion order with phases reduced to
// `[0, 2π)`.
//
// # Safety
// `m` must be a live handle and `out` valid for `capacity` atoms.
enum SsStatus ss_measure_atoms(const struct SsMeasure *m, struct SsAtom *out, uintptr_t capacity);

// Moments of `m` in family `fam`, written as separate real and imaginary
// parts of length `len = ss_family_size(fam)`.
//
// # Safety
// `m` must be a live handle; `re` and `im` valid for `len` doubles.
enum SsStatus ss_forward(const struct SsMeasure *m,
                         struct SsFamily fam,
                         double *re,
                         double *im,
                         uintptr_t len);

// The noise-calibrated regularization level for noise level `sigma`.
//
// # Safety
// `out` must be valid for a write.
enum SsStatus ss_lambda(struct SsFamily fam, double sigma, double *out);

// Solves the BLASSO for samples `re + i·im` at level `lambda` with the
// default solver settings.
//
// # Safety
// `re` and `im` must hold `len` doubles; `out` must be valid for a write.
enum SsStatus ss_solve(struct SsFamily fam,
                       const double *re,
                       const double *im,
                       uintptr_t len,
                       double lambda,
                       struct SsSolveResult **out);

// # Safety
// `r` must be null or a live handle.
void ss_solve_result_free(struct SsSolveResult *r);

// # Safety
// `r` must be a live handle; `out` valid for a write.
enum SsStatus ss_solve_result_summary(const struct SsSolveResult *r, struct SsSolveSummary *out);

// The recovered measure as a new handle.
//
// # Safety
// `r` must be a live handle; `out` valid for a write.
enum SsStatus ss_solve_result_measure(const struct SsSolveResult *r, struct SsMeasure **out);

// The dual polynomial `P̂(x)`.
//
// # Safety
// `r` must be a live handle; `re` and `im` valid for a write.
enum SsStatus ss_solve_result_dual_eval(const struct SsSolveResult *r,
                                        double x,
                                        double *re,
                                        double *im);

// Builds the Fourier dual certificate interpolating the phases of `m` and
// verifies isolation with constants `(c_a, c_b)` on a grid of `grid`
// points (0 picks `64·(2 f_c + 1)`). A failed check is reported through
// `out.passed`, not the status.
//
// # Safety
// `m` must be a live handle; `out` valid for a write.
enum SsStatus ss_certify_fourier(const struct SsMeasure *m,
                                 uintptr_t fc,
                                 double c_a,
                                 double c_b,
                                 uintptr_t grid,
                                 struct SsCertificateReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPIKESOLVE_H */
