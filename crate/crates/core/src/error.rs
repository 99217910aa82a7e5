use alloc::string::String;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("no data: {0}")]
    NoData(&'static str),

    #[error("SMILES is empty")]
    EmptySmiles,

    #[error("SMILES has {len} characters, more than the {max} allowed")]
    TooLong { len: usize, max: usize },

    #[error("character {0:?} is not in the vocabulary")]
    UnknownChar(char),

    #[error("token index {index} out of range for vocabulary of size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid hyperparameters: {0}")]
    HyperParams(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("batch norm needs at least 2 samples per feature in training mode")]
    DegenerateBatch,

    #[error("all labels are masked")]
    AllMasked,

    #[error("metric needs both classes present")]
    SingleClass,

    #[error("class {0} has no members")]
    EmptyClass(u8),

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("search grid exhausted after {0} points")]
    GridExhausted(usize),

    #[error("negative mask value {0}")]
    NegativeMask(f64),

    #[error("k = {k} exceeds content length {len}")]
    TopKTooLarge { k: usize, len: usize },

    #[error("frozen base model weights changed during training")]
    FrozenWeightsChanged,

    #[error("no molecules beyond the {0} cutoff")]
    NoExtremes(&'static str),

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("linear algebra failure: {0}")]
    LinAlg(&'static str),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
