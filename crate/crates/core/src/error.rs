use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not agree.
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A structural or hyperparameter setting is invalid. `key` names the
    /// offending setting (a config key path when one applies).
    #[error("invalid configuration `{key}`: {reason}")]
    Config { key: String, reason: String },

    /// The model contains a layer that mixes statistics across examples.
    #[error("privacy violation: {0}")]
    Privacy(String),

    #[error("invalid input: {0}")]
    Input(String),

    /// The training loop broke its own bookkeeping contract.
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("non-finite gradient at step {step}, layer {layer}, coordinate {index}: {value}")]
    NonFinite {
        step: u64,
        layer: usize,
        index: usize,
        value: f64,
    },

    #[error("accounting error: {0}")]
    Accounting(String),

    #[error("format error in {path} at byte {offset}: {reason}")]
    Format {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A sub-operation failed inside a training step.
    #[error("step {step} (epoch {epoch}) failed: {source}")]
    Step {
        step: u64,
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    /// Internal invariant broken (for example a tape fed the wrong gradient).
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the operator's configuration rather than by a
    /// failure while running.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::Privacy(_))
    }
}
