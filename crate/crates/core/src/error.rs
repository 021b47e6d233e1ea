use alloc::string::String;

/// Errors raised by the model, renderer, fitter and analysis routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("structure has no atoms")]
    EmptyStructure,

    #[error("atom {index} has a non-finite coordinate")]
    NonFiniteCoordinate { index: usize },

    #[error("chain `{0}` appears in more than one contiguous block")]
    NonContiguousChain(String),

    #[error("unknown chain `{0}`")]
    UnknownChain(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("atoms {first} and {second} share a position within the cutoff")]
    DegenerateGeometry { first: usize, second: usize },

    #[error("requested {requested} modes but only {available} non-null modes exist")]
    Capacity { requested: usize, available: usize },

    #[error("degenerate rotation input: {0}")]
    DegenerateRotation(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("signal power is zero, SNR is undefined")]
    UndefinedSnr,

    #[error("non-finite loss at iteration {iteration} (step size {step_size})")]
    Divergence { iteration: usize, step_size: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn dimension(context: impl Into<String>, expected: usize, actual: usize) -> Error {
    Error::Dimension {
        context: context.into(),
        expected,
        actual,
    }
}
