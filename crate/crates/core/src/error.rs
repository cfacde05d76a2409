//! Error types shared across the library.

/// Convenience alias used by every fallible operation in this crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by belief maintenance, kernel evaluation, moment
/// matching, and metric computation.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// Cholesky factorization failed even after the one-shot jitter retry.
    #[error("matrix not positive definite: pivot {pivot:.3e} at index {index}")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    /// A rank-one downdate would push a diagonal pivot to (or below) zero.
    #[error("Cholesky downdate breaks positivity at index {index}")]
    DowndateBreaksPositivity { index: usize },

    /// Operand shapes are inconsistent with each other or with the belief.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The innovation covariance in a measurement update is not invertible.
    #[error("innovation covariance is singular")]
    InnovationCovarianceSingular,

    /// A kernel Gram matrix over inducing inputs could not be factored.
    #[error("kernel matrix over inducing inputs of dim {dim} is singular")]
    SingularKernelMatrix { dim: usize },

    /// The requested operation is not defined for this configuration,
    /// e.g. assumed-density moment matching with a non-RBF kernel.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// The hyperparameter objective carries no usable information
    /// (posterior equals prior, or the effective likelihood is empty).
    #[error("degenerate hyperparameter objective: {0}")]
    Degenerate(String),

    /// Truth values in a normalized-error batch have zero variance, so
    /// the normalization is undefined.
    #[error("truth variance is zero; normalized error undefined")]
    DegenerateTruthVariance,

    /// A predictive standard deviation in a log-loss batch is not
    /// strictly positive.
    #[error("predictive standard deviation must be positive, got {0}")]
    NonPositiveSigma(f64),

    /// Snapshot decoding failed (wrong version or malformed payload).
    #[error("snapshot error: {0}")]
    Snapshot(String),
}
