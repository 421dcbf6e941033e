//! Scaling-law curve extrapolation: a synthetic functional prior over
//! power-law-like curves, classical point and ensemble-MCMC fitters, and a
//! transformer trained on the prior to emit posterior predictive
//! distributions for unseen points in a single forward pass.

pub mod active;
pub mod curve;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod families;
pub mod fit;
pub mod mcmc;
pub mod pfn;
pub mod prior;
pub mod special;
pub mod tensor;

pub use curve::{normalize, denormalize, split_at_fraction, Curve, NormalizationRecord, SplitCurve};
pub use error::{Error, Result};
