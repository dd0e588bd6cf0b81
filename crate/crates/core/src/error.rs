use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read input {path}: {reason}")]
    Input { path: PathBuf, reason: String },

    #[error("image {id} is too small: {width}x{height} ({reason})")]
    ImageTooSmall {
        id: String,
        width: usize,
        height: usize,
        reason: String,
    },

    #[error("invalid patch: {0}")]
    InvalidPatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed {what} at byte offset {offset}: {reason}")]
    Format {
        what: &'static str,
        offset: u64,
        reason: String,
    },

    #[error("energy bookkeeping drifted at iteration {iteration}: incremental {incremental}, recomputed {recomputed}")]
    EnergyDrift {
        iteration: usize,
        incremental: f64,
        recomputed: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
