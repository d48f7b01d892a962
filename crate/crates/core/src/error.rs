use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("zero rows")]
    ZeroRows,

    #[error("schema column `{0}` not present in input")]
    MissingColumn(String),

    #[error("zero usable feature columns")]
    NoFeatures,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("autoencoder score mapping is not calibrated")]
    Uncalibrated,

    #[error("non-finite training loss (learning rate too large?)")]
    Divergence,

    #[error("empty batch")]
    EmptyBatch,

    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("corrupt coded stream: {0}")]
    CorruptStream(String),

    #[error("degenerate size model: {0}")]
    DegenerateFit(String),

    #[error("budget: {0}")]
    Budget(String),

    #[error("no positive labels in scored set")]
    NoPositives,

    #[error("transport: {0}")]
    Transport(String),

    #[error("frame of {0} bytes exceeds the 2^31 byte limit")]
    OversizeFrame(usize),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
