use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("input {input:?} is smaller than kernel {kernel:?}")]
    InputTooSmall { input: Vec<usize>, kernel: Vec<usize> },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("matrix factorization failed: {0}")]
    Factorization(&'static str),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(usize),
    #[error("degenerate batch: {0}")]
    DegenerateBatch(&'static str),
    #[error("kernel bandwidth must be positive, got {0}")]
    InvalidBandwidth(f64),
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
    #[error("label stratum {label} has {count} samples, need at least {min}")]
    StratumTooSmall { label: usize, count: usize, min: usize },
    #[error("too few samples: got {got}, need at least {min}")]
    TooFewSamples { got: usize, min: usize },
    #[error("invalid model: {0}")]
    InvalidModel(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch} (classification {classification}, debias {debias})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        classification: f64,
        debias: f64,
    },
}
