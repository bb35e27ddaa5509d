use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid rotation pair on axis {axis}: (u, v) = ({u}, {v})")]
    InvalidRotation { axis: usize, u: f64, v: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid body template: {0}")]
    InvalidTemplate(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("could not place body inside the bed after {tries} tries")]
    FootprintRejected { tries: usize },

    #[error("step {step} is outside 0..={total}")]
    StepOutOfRange { step: usize, total: usize },

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(what: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::ShapeMismatch {
            what: what.into(),
            expected,
            got,
        }
    }
}
