use alloc::string::String;

/// Errors raised by the core engine.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("gradient requested of a non-scalar output with {0} elements")]
    NonScalarOutput(usize),
    #[error("detached input: argument {0} does not influence the output")]
    DetachedInput(usize),
    #[error("non-twice-differentiable op: node {0} holds a first-order-only gradient")]
    NonTwiceDifferentiable(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("input length {got} is below the minimum supported length {min}")]
    InputTooShort { got: usize, min: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("interval [{start}, {end}) is invalid for length {len}")]
    InvalidInterval { start: usize, end: usize, len: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("series of length {len} is too short, need at least {needed}")]
    SeriesTooShort { len: usize, needed: usize },
    #[error("decoy `{0}` was already applied to this dataset")]
    AlreadyDecoyed(String),
    #[error("label {0} is out of range")]
    LabelOutOfRange(usize),
}

pub type Result<T> = core::result::Result<T, Error>;
