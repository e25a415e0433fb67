//! Reverse-mode automatic differentiation on dense `f64` tensors.

mod adam;
mod checkpoint;
mod gradcheck;
mod ops;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{read_params, write_params};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use ops::{concat, gru_step};
pub use params::{Init, Param, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("loss must have one element, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this tape")]
    AlreadyConsumed,
    #[error("variables belong to different tapes")]
    ForeignVar,
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("parameter `{0}` defined twice")]
    DuplicateParam(String),
    #[error("no gradient for parameter `{0}`")]
    MissingGrad(String),
    #[error("loss is not deterministic: {first} then {second}")]
    NonDeterministic { first: f64, second: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
