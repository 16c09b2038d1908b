use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("observation point {observation} coincides with source {source_index}")]
    CoincidentPoint { observation: usize, source_index: usize },

    #[error("reference magnitude is zero at sample {index}")]
    ZeroReferenceMagnitude { index: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty matrix")]
    EmptyMatrix,

    #[error("zero reference data: {0}")]
    ZeroReference(&'static str),

    #[error("{stage}: {source}")]
    Stage { stage: &'static str, source: Box<Error> },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
