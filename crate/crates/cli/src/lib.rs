//! Synthetic corpus, dataset files, and the pipeline behind the `webrpg`
//! binary.

pub mod dataset;
pub mod pipeline;
pub mod synth;

use thiserror::Error;
use webrpg_core::html::HtmlError;
use webrpg_core::rp::RpError;
use webrpg_core::vc::VcError;
use webrpg_eval::EvalError;
use webrpg_models::ModelError;
use webrpg_nn::NnError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("bad synthesis spec: {0}")]
    BadSpec(String),
    #[error("no sample passed the VC filter (threshold {threshold}, {total} candidates)")]
    EmptyAfterFilter { threshold: f64, total: usize },
    #[error("bad configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Html(#[from] HtmlError),
    #[error(transparent)]
    Rp(#[from] RpError),
    #[error(transparent)]
    Vc(#[from] VcError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}
