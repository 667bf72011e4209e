//! Selection among competing Bayesian inverse regression models by multiple
//! testing: leave-one-out inverse posteriors of held-out covariates,
//! discrepancy-measure reference distributions, posterior model
//! probabilities through pseudo-Bayes factors, and threshold decisions with
//! conditional FDR/FNR curves.

pub mod error;
pub mod evidence;
pub mod harness;
pub mod irmcmc;
pub mod models;
pub mod random;
pub mod stats;
pub mod testing;
pub mod tmcmc;

pub use error::{Error, Result};

/// Concrete scalar used by the pipeline; the kernels in [`stats`] and
/// [`testing`] stay generic over `num_traits::Float`.
pub type Scalar = f64;
