use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid window: width must be at least 1, got {0}")]
    InvalidWindow(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed cooccurrence file: {0}")]
    Malformed(String),

    #[error("negative count at record {0}")]
    NegativeCount(usize),

    #[error("undefined marginal for pair ({i}, {j})")]
    UndefinedMarginal { i: usize, j: usize },

    #[error("{what} id {id} out of range (size {size})")]
    IdOutOfRange {
        what: &'static str,
        id: usize,
        size: usize,
    },

    #[error("unbounded association; choose a clipped variant")]
    UnboundedAssociation,

    #[error("rank {rank} out of range [1, {max}]")]
    RankOutOfRange { rank: usize, max: usize },

    #[error("kernel mismatch: expected {expected}, model has {found}")]
    KernelMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{0} requires all_pairs")]
    RequiresAllPairs(&'static str),

    #[error("diverged at epoch {epoch}, last finite loss {last_finite_loss}")]
    Diverged { epoch: usize, last_finite_loss: f64 },

    #[error("no qualifying pairs with count >= {0}")]
    NoQualifyingPairs(f64),

    #[error("empty histogram: no pairs with positive count")]
    EmptyHistogram,

    #[error("vocabulary mismatch: missing token '{0}'")]
    VocabularyMismatch(String),

    #[error("malformed embedding file: {0}")]
    MalformedEmbedding(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
