use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("feature dimension mismatch: node {node} has {got} features, expected {expected}")]
    DimensionMismatch {
        node: usize,
        expected: usize,
        got: usize,
    },
    #[error("duplicate node id {0}")]
    DuplicateNode(usize),
    #[error("node ids are not contiguous: missing id {0}")]
    MissingNode(usize),
    #[error("self-loop edge ({0}, {0})")]
    SelfLoop(usize),
    #[error("edge ({src}, {dst}) references a node outside 0..{n}")]
    DanglingEdge { src: usize, dst: usize, n: usize },
    #[error("invalid node id {id} (graph has {n} nodes)")]
    InvalidNode { id: usize, n: usize },
    #[error("category {category} out of range 0..{categories}")]
    CategoryOutOfRange { category: usize, categories: usize },
    #[error("pair universe needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("estimated propensity {value} below floor {floor}")]
    PropensityBelowFloor { value: f64, floor: f64 },
    #[error("closed-form bias and variance require the zero-one loss")]
    RequiresZeroOne,
    #[error("invalid config field `{field}`: {msg}")]
    Config { field: &'static str, msg: String },
    #[error("empty function family")]
    EmptyFamily,
    #[error("graph has no positive edges to sample from")]
    NoEdges,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("degenerate feedback step at t={t}: {msg}")]
    Degenerate { t: usize, msg: String },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: &'static str, msg: impl Into<String>) -> Self {
        Error::Config {
            field,
            msg: msg.into(),
        }
    }

    /// Coarse class used by front ends to pick an exit status.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config { .. } | Error::EmptyFamily | Error::RequiresZeroOne => {
                ErrorKind::Config
            }
            Error::NonFinite(_) | Error::Degenerate { .. } | Error::PropensityBelowFloor { .. } => {
                ErrorKind::Numeric
            }
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

pub type Result<T> = std::result::Result<T, Error>;
