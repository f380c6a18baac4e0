use alloc::boxed::Box;
use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid patch: {0}")]
    InvalidPatch(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid singular mask: {0}")]
    InvalidMask(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("degenerate patch: {0}")]
    Degenerate(String),
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("requested dimension {requested} exceeds available rank {available}")]
    RankExceeded { requested: usize, available: usize },
    #[error("sectional curvature needs intrinsic dimension >= 2, got {0}")]
    NoPlanes(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("similar ratio needs at least 2 usable entries, {surviving} survived filtering")]
    DegenerateRatio { surviving: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, with any stage tags removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
