use thiserror::Error;

/// Domain errors raised by validation, scoring, region proposal and losses.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite component in vector {vector} at position {component}")]
    NonFiniteComponent { vector: usize, component: usize },

    #[error("grid geometry inconsistent: {0}")]
    GeometryInconsistent(String),

    #[error("zero-norm vector{}", .index.map(|i| format!(" at index {i}")).unwrap_or_default())]
    ZeroNormVector { index: Option<usize> },

    #[error("grid has no patches")]
    EmptyGrid,

    #[error("component has no patches")]
    EmptyComponent,

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("bounding box ({x1}, {y1}, {x2}, {y2}) out of bounds for {img_w}x{img_h} image")]
    BoxOutOfBounds {
        x1: u32,
        y1: u32,
        x2: u32,
        y2: u32,
        img_w: u32,
        img_h: u32,
    },

    #[error("positive set is empty")]
    EmptyPositiveSet,

    #[error("supervision sets invalid: {0}")]
    InvalidSupervision(String),

    #[error("duplicate document id in ranking: {0}")]
    DuplicateDocId(String),

    #[error("unknown document id: {0}")]
    UnknownDocId(String),

    #[error("invalid hyper-parameter: {0}")]
    InvalidHyperParams(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible geometry: {0}")]
    InfeasibleGeometry(String),

    #[error("batch is empty")]
    EmptyBatch,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
