use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by {op} (node {node})")]
    NonFinite { op: &'static str, node: usize },

    #[error("loss node must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("every entry is masked")]
    AllMasked,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate direction: pre-normalization norm {0:e} is below 1e-8")]
    DegenerateDirection(f64),

    #[error("vMF rejection sampler exceeded {0} tries")]
    SamplerExhausted(usize),

    #[error(transparent)]
    Grammar(#[from] crate::grammar::GrammarError),

    #[error("illegal action at index {index}: {reason}")]
    IllegalAction { index: usize, reason: String },

    #[error("incomplete derivation after {0} actions")]
    IncompleteDerivation(usize),

    #[error("{trailing} trailing action(s) after derivation completed at index {completed_at}")]
    TrailingActions {
        completed_at: usize,
        trailing: usize,
    },

    #[error("derivation is already complete")]
    DerivationComplete,

    #[error("no constants of category `{0}` in context")]
    NoConstants(String),

    #[error("enumeration budget of {0} partial derivations exceeded")]
    BudgetExceeded(usize),

    #[error("example {id}: {reason}")]
    InvalidExample { id: usize, reason: String },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from invalid user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Grammar(_)
            | Error::InvalidExample { .. }
            | Error::Dataset(_)
            | Error::Config(_)
            | Error::InvalidArgument(_)
            | Error::IllegalAction { .. }
            | Error::IncompleteDerivation(_)
            | Error::TrailingActions { .. } => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
