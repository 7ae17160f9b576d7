use thiserror::Error;

pub type Result<T, E = WeaverError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WeaverError {
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("{op}: axis {axis} out of range for rank {rank}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },

    #[error("top-k: k = {k} outside 1..={size}")]
    KOutOfRange { k: usize, size: usize },

    #[error("batched matmul: inner dimensions {lhs} and {rhs} differ")]
    IncompatibleInner { lhs: usize, rhs: usize },

    #[error("{op}: batch modes {lhs:?} and {rhs:?} are not broadcastable")]
    NotBroadcastable {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("rearrange pattern `{pattern}`: {reason}")]
    Pattern { pattern: String, reason: String },

    #[error("KMV ledger violation: {0}")]
    Ledger(String),

    #[error("{0}: empty input")]
    EmptyInput(&'static str),

    #[error("backward: loss must hold exactly one scalar, found shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<WeaverError>,
    },

    #[error("io: {0}")]
    Io(String),
}

impl WeaverError {
    pub(crate) fn shape(op: &'static str, expected: &[usize], got: &[usize]) -> Self {
        Self::ShapeMismatch {
            op,
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}

impl From<std::io::Error> for WeaverError {
    fn from(err: std::io::Error) -> Self {
        Self::Io(err.to_string())
    }
}

/// Attaches the name of a model stage to errors raised inside it.
pub(crate) trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|source| WeaverError::Stage {
            stage,
            source: Box::new(source),
        })
    }
}
