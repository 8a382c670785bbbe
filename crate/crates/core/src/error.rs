//! Error type shared across the crate.
//!
//! Shape mismatches deep inside tape ops are programmer errors and panic via
//! `assert!`; everything that can go wrong from user input or at runtime
//! (bad configs, degenerate geometry, non-finite values, malformed files)
//! surfaces as an [`Error`].

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration or invalid user input.
    #[error("invalid config: {0}")]
    Config(String),

    /// Geometrically or numerically degenerate input (near-zero norms,
    /// nonpositive depths, empty feature vectors).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Non-finite values or diverging optimization.
    #[error("numerical failure: {0}")]
    Numerics(String),

    /// Malformed dataset or checkpoint file.
    #[error("bad data: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: validation problems exit 1, numerical
    /// failures exit 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerics(_) => 2,
            _ => 1,
        }
    }
}
