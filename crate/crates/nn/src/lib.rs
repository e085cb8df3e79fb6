//! Dense 2-D tensors, a reverse-mode autodiff tape, transformer layers,
//! AdamW, finite-difference gradient checks and parameter checkpoints.
//!
//! Sequences of several samples are packed row-wise into one matrix;
//! attention is restricted to row segments so samples never mix.

pub mod checkpoint;
mod gradcheck;
mod graph;
pub mod layers;
mod optim;
mod store;
mod tensor;

use thiserror::Error;

pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport};
pub use graph::{AttnSegment, Gradients, Graph, Var, IGNORE};
pub use optim::{AdamW, OptimizerConfig};
pub use store::{ParamId, ParamStore};
pub use tensor::{Real, Tensor};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
