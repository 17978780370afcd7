//! Synthetic datasets, batch evaluation and HPSI inspection.

mod generate;
mod inspect;
mod report;

use thiserror::Error;

use crate::atdm::AtdmError;
use crate::backend::BackendError;
use crate::config::ConfigError;
use crate::hpsi::HpsiError;
use crate::stream::StreamError;

pub use generate::{
    generate_dataset, generate_feature_stream, random_spec, DatasetOptions, DropSpec, GeneratedEpisode, Manifest,
    ManifestEntry, Reveal, SyntheticEpisodeSpec, DROP_FROM, DROP_TO, RESTORED,
};
pub use inspect::{hpsi_inspect, inspect_dumps, InspectDumps, InspectSummary, LayoutMaskDump};
pub use report::{
    answer_matches, evaluate, evaluate_traces, Aggregates, BackendChoice, EpisodeRow, EvalReport,
    ACCURACY_CONVENTION,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Atdm(#[from] AtdmError),
    #[error(transparent)]
    Hpsi(#[from] HpsiError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
