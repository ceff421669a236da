// SPDX-License-Identifier: MIT OR Apache-2.0

//! Crate-wide error type.

use std::path::PathBuf;

/// Every fallible operation in the crate reports one of these.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor shapes that do not line up for the requested operation.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// An index (token id, class id, layer/head pair) outside its valid range.
    #[error("index error: {0}")]
    Index(String),

    /// A caller broke a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// Value outside the mathematical domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A NaN or infinity showed up where finite values are required.
    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    /// Malformed input data (datasets, prompts, vocab files).
    #[error("data error: {0}")]
    Data(String),

    /// Checkpoint file problems.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) => 2,
            Error::NonFinite(_) => 4,
            _ => 3,
        }
    }
}
