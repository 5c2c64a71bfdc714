use std::path::PathBuf;

/// Error type shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A graph operation was built or executed with incompatible shapes.
    /// Carries the node index and operation name so the offending node can
    /// be located.
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    ShapeMismatch {
        node: usize,
        op: &'static str,
        detail: String,
    },

    #[error("unknown graph input `{0}`")]
    UnknownInput(String),

    #[error("input `{name}` has {got} values, expected {expected}")]
    InputSize {
        name: String,
        got: usize,
        expected: usize,
    },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid parameter value: {0}")]
    Param(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
