//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or unmet strategy requirement.
    #[error("configuration error: {0}")]
    Config(String),

    /// A model evaluation returned a non-finite value.
    #[error("non-finite model evaluation at time step {t}: {what}")]
    Evaluation { t: usize, what: String },

    /// A particle weight became NaN or +inf during a sweep.
    #[error("invalid log-weight at time step {t}, slot {slot}: {value}")]
    Weight { t: usize, slot: usize, value: f64 },

    /// A matrix that must be factorised was (numerically) singular.
    #[error("numerical singularity at time step {t}: {what}")]
    Singular { t: usize, what: String },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
