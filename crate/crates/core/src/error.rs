use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch, left is {left:?}, right is {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("unknown node id `{0}`")]
    UnknownNode(String),

    #[error("distance list is empty, kernel width is undefined")]
    EmptyDistances,

    #[error("weight matrix is not symmetric at ({row}, {col})")]
    Asymmetric { row: usize, col: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular system in {0}")]
    Singular(&'static str),

    #[error("loss node must be a 1x1 scalar, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("tape is not in topological order at node {0}")]
    TapeOrder(usize),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss at epoch {epoch}, iteration {iteration}: {loss}")]
    NonFiniteLoss {
        epoch: usize,
        iteration: usize,
        loss: f64,
    },

    #[error("zero variance in training data, z-score is undefined")]
    ZeroVariance,

    #[error("metric requires at least one observed entry")]
    EmptyMask,

    #[error("observed truth entry {0} is zero, percentage error is undefined")]
    ZeroTruth(usize),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
