//! Generative models over rendering parameters.
//!
//! Every element of a page is embedded from its text, XPath and character
//! count ([`embedding`]); its 13 rendering parameters are compressed to a
//! latent by a VAE ([`vae`]). Two generators map a page's embeddings to
//! latents: a masked encoder/decoder transformer ([`ar`]) and a latent
//! diffusion model ([`dm`]).

pub mod ar;
pub mod data;
pub mod dm;
pub mod embedding;
pub mod train;
pub mod vae;

use thiserror::Error;
use webrpg_nn::NnError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("element {index}: token {token} is not legal for {param}")]
    InvalidVector {
        index: usize,
        param: &'static str,
        token: u16,
    },
    #[error("semantic encoder: {0}")]
    EncoderFailure(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("loss diverged at step {step}")]
    DivergenceDetected { step: usize },
    #[error("timestep {t} outside 1..={max}")]
    BadTimestep { t: usize, max: usize },
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("page has {elements} elements but {vectors} rendering-parameter vectors")]
    Misaligned { elements: usize, vectors: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Latent and hidden width used throughout.
pub const D_MODEL: usize = 128;
