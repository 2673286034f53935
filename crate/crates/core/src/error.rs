use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("dimension mismatch ({what}): expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value at element {index}")]
    NonFiniteValue { index: usize },

    #[error("zero-norm feature vector")]
    ZeroVector,

    #[error("both masks are empty")]
    EmptyMasks,

    #[error("iteration {iter} outside [0, {total}]")]
    IterOutOfRange { iter: u64, total: u64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("coverage relation contains a cycle through mask {node}")]
    CyclicCoverage { node: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error in {}: line {line}, column {column}: {message}", file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid RLE: {0}")]
    InvalidRle(String),

    #[error("missing image {0}")]
    MissingImage(String),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
