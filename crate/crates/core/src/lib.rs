//! Extended LatticeKrig: Bayesian multiresolution spatial models built from
//! layered Wendland bases with SAR precision, plus prediction, scoring and a
//! simulation-study harness.

pub mod cholesky;
pub mod error;
pub mod geometry;
pub mod inference;
pub mod io;
pub mod model;
pub mod precision;
pub mod rng;
pub mod scoring;
pub mod sparse;
pub mod special;
pub mod spline;
pub mod study;

pub use error::{ElkError, Result};
