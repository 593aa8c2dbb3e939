use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("invalid axis {axis} for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("non-finite function evaluation during finite-difference check")]
    NonFiniteEvaluation,
    #[error("convolution produces an empty output: {0}")]
    EmptyOutput(String),
    #[error("invalid resample target: {0}")]
    InvalidTarget(String),
    #[error("input {h}x{w} is not divisible by {divisor}")]
    IndivisibleInput { h: usize, w: usize, divisor: usize },
    #[error("input {h}x{w} is smaller than the minimum {min}")]
    InputTooSmall { h: usize, w: usize, min: usize },
    #[error("unknown tap {0:?}")]
    UnknownTap(String),
    #[error("compound scaling constraint violated: alpha*beta^2*gamma^2 = {0:.4} not in [1.8, 2.2]")]
    ConstraintViolation(f64),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("optimizer step {step} exceeds schedule length {max_steps}")]
    StepOverflow { step: usize, max_steps: usize },
    #[error("non-finite loss component {0}")]
    NonFiniteLoss(String),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("image {0} has no mask partner")]
    MissingMask(String),
    #[error("unreadable image {path}: {reason}")]
    UnreadableImage { path: PathBuf, reason: String },
    #[error("degenerate split: train={train} val={val}")]
    DegenerateSplit { train: usize, val: usize },
    #[error("no benchmark baseline at {0}")]
    MissingBaseline(PathBuf),
    #[error("config error: {0}")]
    Config(String),
    #[error("weight file format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
