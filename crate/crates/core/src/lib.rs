//! Numerics for Yurinskii-type Gaussian couplings of martingales.
//!
//! The crate collects the explicit coupling-error bounds, simulators for the
//! dependence regimes they cover, the kernel density covariance study, and
//! two nonparametric regression pipelines with multiplier-bootstrap bands.

pub mod coupling;
pub mod dgp;
pub mod error;
pub mod gaussian;
pub mod hdclt;
pub mod kde;
pub mod numeric;
pub mod regression;
pub mod rng;

pub use error::{Error, Result};
pub use gaussian::{phi_p, lp_norm, GaussianLaw, PNorm, PsdMatrix};
pub use rng::Streams;
