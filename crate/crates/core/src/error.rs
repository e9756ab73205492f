//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes of the pipeline.
///
/// `ScanError` is not a bug signal: it is the pipeline's rejection verdict
/// for scans whose filtered object cluster is too small, and callers are
/// expected to discard the scan (the CLI maps it to its own exit code).
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid index ({i}, {j}) out of range for {nx}x{ny} grid")]
    IndexOutOfRange { i: usize, j: usize, nx: usize, ny: usize },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("scan rejected: {total} object points after filtering, need at least {min_total}")]
    ScanError { total: usize, min_total: usize },

    #[error("scene sampling failed: {0}")]
    Sampling(String),

    #[error("degenerate raster: {0}")]
    DegenerateRaster(String),

    #[error("model state: {0}")]
    State(String),

    #[error("training diverged: non-finite {quantity} in phase {phase}, epoch {epoch}")]
    NonFinite { quantity: String, phase: String, epoch: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("file format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
