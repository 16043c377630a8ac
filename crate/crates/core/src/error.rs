//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("row {row} of {table} became all-zero after pruning at threshold {threshold}")]
    DegenerateRow {
        table: &'static str,
        row: usize,
        threshold: f64,
    },

    #[error("token {token} out of vocabulary (vocab size {vocab})")]
    TokenOutOfVocab { token: u32, vocab: usize },

    #[error("prefix has probability zero under the model")]
    PrefixOutsideSupport,

    #[error("{what} requires {needed} states/items, exceeding the cap of {cap}")]
    CapacityExceeded {
        what: &'static str,
        needed: u128,
        cap: u64,
    },

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("sequence length {got}, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("sequence {index} has probability zero under the scoring model; TER is only defined for threshold-0 languages")]
    UndefinedPerplexity { index: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("reveal sets do not partition the sequence positions")]
    NotAPartition,

    #[error("KL divergence is infinite: p assigns zero mass where q is positive (index {index})")]
    InfiniteKl { index: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}
