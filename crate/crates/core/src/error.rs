use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("buffer is empty")]
    EmptyBuffer,
    #[error("neighbour count {neighbors} out of range for buffer of {len}")]
    NeighborsOutOfRange { neighbors: usize, len: usize },
    #[error("non-finite value: {0}")]
    NonFinite(f64),
    #[error("feedback of {len} entries exceeds buffer capacity {capacity}")]
    FeedbackTooLong { len: usize, capacity: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("sample {0} has no ground-truth label")]
    UnknownSample(usize),
    #[error("class {0} has zero probability")]
    ZeroProbabilityClass(usize),
    #[error("rate {0} outside (0, 1]")]
    InvalidRate(f64),
    #[error("stream of node {node} exhausted")]
    StreamExhausted { node: usize },
    #[error("need at least {needed} usable points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
}
