//! Probabilistic seizure-risk forecasting with Bayesian convolutional networks.
//!
//! - [`bayes`] / [`network`]: Gaussian variational layers and the BCNN.
//! - [`svi`]: stochastic variational inference on the negative ELBO.
//! - [`fusion`]: circular KDE priors over time-of-day / day-of-week and the
//!   Bayes-rule factor applied to the pre-softmax output.
//! - [`uncertainty`]: Monte-Carlo output sampling and the uncertainty level.
//! - [`pipeline`]: recordings, labeling, spectrograms, synthetic data.
//! - [`eval`]: AUC, per-arm evaluation, timelines, run manifests.
//! - [`experiment`]: the end-to-end train and evaluate workflow.

pub mod bayes;
pub mod checkpoint;
mod error;
pub mod eval;
pub mod experiment;
pub mod fusion;
pub mod network;
pub mod pipeline;
pub mod rng;
pub mod svi;
pub mod uncertainty;

pub use error::{Error, Result};
pub use seizure_tensor as tensor;
