use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot parse architecture {input:?}: {reason}")]
    Architecture { input: String, reason: String },

    #[error("{0}: empty input")]
    Empty(&'static str),

    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(alloc::vec::Vec<usize>),

    #[error("backward: loss does not depend on any tensor that requires grad")]
    Detached,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("mask has no clear pixels in {0}")]
    EmptyMask(&'static str),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
