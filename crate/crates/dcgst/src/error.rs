//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DcgstError {
    /// Dataset files missing, malformed, or internally inconsistent.
    #[error("ingest error: {0}")]
    Ingest(String),

    /// A requested split cannot be constructed (e.g. a class has no
    /// available node).
    #[error("split error: {0}")]
    Split(String),

    /// Operand shapes do not conform for a tape primitive or model layer.
    #[error("shape error: {0}")]
    Shape(String),

    /// A masked reduction was asked to average over an empty node set.
    #[error("empty mask: {0}")]
    EmptyMask(String),

    /// Weighted moments were requested with total weight zero.
    #[error("degenerate weights: {0}")]
    DegenerateWeight(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DcgstError>;
