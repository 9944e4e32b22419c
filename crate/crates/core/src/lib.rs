//! Time-blind flow matching on spiked Gaussian data: what a model that
//! cannot see the interpolation time can and cannot recover.
//!
//! The crate provides four pillars around the linear interpolant
//! `z = (1−t)ε + tx`:
//!
//! - the **variance clock** `σ⊥²(t)` and a closed-form single-sample
//!   time estimator built on it ([`clock`], [`estimator`]);
//! - the **three-term decomposition** of the time-blind regression
//!   loss into target variance, coupling variance, and the
//!   time-blindness gap ([`decomposition`]);
//! - **mini-batch optimal transport** pairing and coupling-cost
//!   comparisons ([`ot`]);
//! - **spiked covariance fitting** so the estimator can run on raw
//!   data matrices ([`pca`]).
//!
//! [`sweep`] bundles these into reproducible experiment harnesses with
//! CSV outputs; [`io`] holds the file formats. Closed-form operations
//! are generic over the scalar type through [`scalar::Real`];
//! Monte-Carlo layers run in `f64` (see the aliases below).

// Validation uses negated comparisons (`!(x > 0)`) so that NaN inputs
// fail the check instead of slipping through a `x <= 0` rewrite.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clock;
pub mod decomposition;
pub mod error;
pub mod estimator;
pub mod io;
pub mod linalg;
pub mod model;
pub mod ot;
pub mod pca;
pub mod scalar;
pub mod seed;
pub mod sweep;

pub use error::{Error, Result};

/// Scalar used by the Monte-Carlo layers.
pub type Scalar = f64;
/// Spiked model at the default scalar.
pub type Model = model::SpikedModel<Scalar>;
/// Time interval at the default scalar.
pub type Interval = model::TimeInterval<Scalar>;
/// Time estimate at the default scalar.
pub type Estimate = estimator::TimeEstimate<Scalar>;
/// Dense matrix at the default scalar.
pub type Mat = linalg::Matrix<Scalar>;
/// Fitted spiked model at the default scalar.
pub type Fitted = pca::FittedSpike<Scalar>;
