//! Scoring generated rendering parameters against real ones.

pub mod classifier;
pub mod fid;
pub mod metrics;
pub mod noise;

pub use classifier::{ClassifierInput, FidClassifier, FidClassifierConfig, FidVariant, TrainedClassifier};
pub use fid::{fid, fid_from_stats, FidStats};
pub use metrics::{ele_iou, page_iou, sc_score, style_partition, BBox, StyleSubset};
pub use noise::{apply_swaps, perturb_values, pollute, substitute_elements, swap_elements, NoiseConfig};

use thiserror::Error;
use webrpg_core::rp::ElementId;
use webrpg_models::ModelError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {real} real vs {gen} generated")]
    LengthMismatch { real: usize, gen: usize },
    #[error("element id sets differ (first difference at {0})")]
    IdMismatch(ElementId),
    #[error("element {0} has no pixel layout")]
    MissingLayout(ElementId),
    #[error("need at least {need} feature vectors, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("feature dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("covariance is singular or not finite after jitter")]
    SingularCovariance,
    #[error("nothing to score")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<webrpg_nn::NnError> for EvalError {
    fn from(e: webrpg_nn::NnError) -> Self {
        EvalError::Model(ModelError::Nn(e))
    }
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;
