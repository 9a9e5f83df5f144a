use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the identification and detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument or configuration value violates a documented precondition.
    #[error("invalid input: {0}")]
    Validation(String),

    /// A second-order Kautz section would have poles on or outside the unit circle.
    #[error("unstable Kautz section: b = {b}, c = {c}")]
    Unstable { b: f64, c: f64 },

    /// The ODE integration produced a non-finite state.
    #[error("integration diverged at output sample {step}")]
    Divergence { step: usize },

    /// No resonance could be located in the frequency response.
    #[error("modal estimation failed: {0}")]
    Estimation(String),

    /// The regression matrix is rank deficient beyond tolerance.
    #[error("ill-posed least-squares problem: numerical rank {rank} < {columns} columns")]
    IllPosed { rank: usize, columns: usize },

    /// Too many Monte Carlo realizations failed.
    #[error("ensemble aborted: {failed} of {total} realizations failed (first failure: {first})")]
    EnsembleAborted {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// True for errors caused by bad configuration or arguments rather than numerics or I/O.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Validation(_) | Error::Format { .. })
    }

    /// True for numerical failures (instability, divergence, rank deficiency, ...).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Unstable { .. }
                | Error::Divergence { .. }
                | Error::Estimation(_)
                | Error::IllPosed { .. }
                | Error::EnsembleAborted { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
