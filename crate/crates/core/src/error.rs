// SPDX-License-Identifier: MIT OR Apache-2.0

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no observed values")]
    NoObservedValues,

    #[error("invalid patch size {0}: must be positive")]
    InvalidPatchSize(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A metric whose denominator vanished; callers drop the setting.
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("cholesky factorization failed after jitter escalation")]
    Cholesky,

    #[error("missing forward cache: {0}")]
    MissingCache(&'static str),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error("non-finite loss at step {step} (lr={lr:.3e}, grad_norm={grad_norm:.3e}, loss={loss})")]
    NumericalAbort {
        step: usize,
        lr: f64,
        grad_norm: f64,
        loss: f64,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 data, 4 numerical abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::InvalidPatchSize(_) => 2,
            Error::NumericalAbort { .. } | Error::Cholesky => 4,
            _ => 3,
        }
    }
}
