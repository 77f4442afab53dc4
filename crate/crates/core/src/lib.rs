//! Spike recovery from noisy generalized moments.
//!
//! The crate reconstructs a discrete complex measure from `m + 1` noisy
//! Fourier or Chebyshev moments by solving the Beurling LASSO through its
//! Fenchel dual, and evaluates certified localization guarantees (dual
//! certificates, confidence radii, mass bounds) together with noise-calibrated
//! regularization parameters.
//!
//! Module map:
//!
//! * [`measure`]: discrete measures, separation, near/far geometry.
//! * [`family`], [`grid`], [`bernstein`]: measurement families, generalized
//!   polynomials, certified sup-norm bounds and Bernstein constants.
//! * [`noise`]: Gaussian noise models, Rice tail bounds, λ rules, Monte Carlo.
//! * [`certificate`]: construction and verification of dual certificates.
//! * [`solver`]: the dual BLASSO solver and the grid-LASSO oracle.
//! * [`guarantees`]: localization, detection and Bregman diagnostics.
//! * [`experiment`], [`io`]: scenarios, run directories and file formats.

pub mod bernstein;
pub mod certificate;
pub mod error;
pub mod experiment;
pub mod family;
pub mod grid;
pub mod guarantees;
pub mod io;
pub mod measure;
pub mod noise;
pub mod solver;

pub use error::{Error, Result};
pub use family::{forward, GeneralizedPolynomial, MeasurementFamily, SampleVector};
pub use measure::{tv_norm, Atom, DiscreteMeasure, Domain};
