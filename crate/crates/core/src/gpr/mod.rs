//! Exact Gaussian-process regression on standardized cycle features.
//!
//! The kernel is an ARD squared exponential
//!
//! ```text
//! k(x, x') = sf2 * exp(-1/2 * sum_m (x_m - x'_m)^2 / s_m^2)
//! ```
//!
//! with per-dimension length scales `s_m`, signal variance `sf2` and
//! observation noise variance `sn2` added on the Gram diagonal. Training
//! maximizes the log marginal likelihood over the log hyperparameters with
//! the quasi-Newton routine from [`crate::hyperopt`]; predictions come from
//! the standard posterior mean and variance through a Cholesky factor.

mod io;
mod kernel;
mod model;

pub use io::{load_model, save_model, ModelIoError, MODEL_MAGIC};
pub(crate) use kernel::factorize_gram;
pub use kernel::{kernel_eval, kernel_matrix, log_marginal_likelihood, Hyperparams};
pub use model::{
    fit, fit_matrix, model_with_fixed_hyperparams, FitConfig, Prediction, TrainedModel,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GprError {
    #[error("hyperparameters must be positive and finite: {0}")]
    BadHyperparams(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("targets are degenerate (zero variance); nothing to fit")]
    DegenerateTargets,
    #[error("kernel matrix could not be factorized: {0}")]
    Factorization(#[from] crate::linalg::LinalgError),
    #[error("hyperparameter search failed: {0}")]
    Optim(#[from] crate::hyperopt::OptimError),
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error(transparent)]
    Encoding(#[from] crate::dataset::DatasetError),
}
