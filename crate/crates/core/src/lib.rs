//! Online learning for Gaussian-process state-space models.
//!
//! The library maintains a joint Gaussian belief over a set of inducing
//! outputs `u` of an unknown multi-output function `f` and the current
//! latent state `x`, represented by its mean and a lower-triangular
//! Cholesky factor of the covariance. Each time step runs
//!
//! 1. novelty-gated augmentation of the inducing set ([`inducing::maybe_add`]),
//! 2. a moment-matched prediction through the transition model
//!    ([`matcher::Matcher::predict`], with EKF, UKF, or exact
//!    assumed-density moment-matching backends),
//! 3. budget enforcement by discarding the least informative inducing
//!    points ([`inducing::enforce_budget`]),
//! 4. a Kalman-style measurement correction ([`matcher::correct`]),
//! 5. optional online hyperparameter adaptation ([`hyper::hyper_step`]).
//!
//! Every output dimension of `f` can use its own kernel, hyperparameters,
//! and input mapping; the prior across dimensions is block diagonal.
//! All covariance updates operate directly on the Cholesky factor
//! (rank-one updates and downdates, thin QR, block insertion and
//! deletion) so the belief never needs a dense re-factorization on the
//! happy path.

pub mod error;
pub mod gp;
pub mod hyper;
pub mod inducing;
pub mod kernel;
pub mod linalg;
pub mod matcher;
pub mod metrics;
pub mod model;
pub mod snapshot;

pub mod par;

pub use error::{Error, Result};
pub use linalg::LowerTriangular;
