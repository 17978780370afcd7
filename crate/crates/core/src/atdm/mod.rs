//! Streaming decision controller: decomposes a question into sub-questions,
//! tracks per-clip sub-answers with confidences, reflects when confidence
//! drops or stays low, and answers at the first clip where every sub-question
//! is resolved.

mod controller;
mod parts;
pub mod prompts;
mod types;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, SchemaError};

pub use controller::{run_episode, Controller, DecisionTrace, EventKind, TelemetryEvent, TraceStatus};
pub use parts::{
    apply_part4, clip_payload, compose_answer, merge_reflection, parse_final, parse_part1, parse_part2,
    parse_part3, parse_part4, parse_part5, part1_instructions, part2_decompose, part3_caption, part4_update,
    part5_reflect, reflection_trigger, Part4Reply, ReplyEntry,
};
pub use types::{
    clip_timestamp, format_hms, parse_timestamp, progress, AttributeUpdate, CaptionInstructions, ClipCaption,
    ReflectionReport, ReflectionStatus, SubAnswer, SubAnswerState, SubQuestion, SubQuestionSet, SubQuestionType,
    MAX_CAPTION_WORDS, MAX_REQUIREMENTS, UNKNOWN,
};

#[derive(Debug, Error)]
pub enum AtdmError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("schema error: {0}")]
    Schema(#[from] SchemaError),
    #[error("index error: {0}")]
    Index(String),
    #[error("merge error: {0}")]
    Merge(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("episode already finished")]
    Finished,
    #[error("telemetry write failed: {0}")]
    Telemetry(#[from] std::io::Error),
}

impl AtdmError {
    /// Malformed replies, as opposed to transport or configuration failures.
    pub fn is_reply_error(&self) -> bool {
        matches!(self, AtdmError::Schema(_) | AtdmError::Index(_) | AtdmError::Merge(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AtdmConfig {
    /// Confidence at which a sub-question counts as resolved.
    pub theta_ans: f64,
    /// Drop between consecutive confidences that triggers reflection.
    pub theta_drop: f64,
    /// Consecutive low states that trigger reflection.
    pub w_low: usize,
    pub low_bar: f64,
    /// Change-point captions kept for reflection.
    pub history_cap: usize,
    /// Replace confidences and progress with 0/1 answerable flags.
    pub binary_gate: bool,
    /// Clips whose captions may be requested ahead of the current one.
    pub w_par: usize,
    pub seed: u64,
}

impl Default for AtdmConfig {
    fn default() -> Self {
        Self {
            theta_ans: 0.85,
            theta_drop: 0.3,
            w_low: 2,
            low_bar: 0.5,
            history_cap: 8,
            binary_gate: false,
            w_par: 1,
            seed: 0,
        }
    }
}

impl AtdmConfig {
    pub fn validate(&self) -> Result<(), AtdmError> {
        if self.w_par == 0 {
            return Err(AtdmError::Config("w_par must be at least 1".into()));
        }
        for (name, v) in [
            ("theta_ans", self.theta_ans),
            ("theta_drop", self.theta_drop),
            ("low_bar", self.low_bar),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(AtdmError::Config(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}
