//! Reasoner backends: a scripted oracle for tests and an HTTP chat-completions client.

mod extract;
mod http;
mod mock;

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use extract::{extract_json, extract_json_bytes, SchemaError};
pub use http::{HttpReasoner, RetryPolicy};
pub use mock::{Script, ScriptEntry, ScriptedOracle};

/// Which protocol prompt a request carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateId {
    Part1,
    Part2,
    Part3,
    Part4,
    Part5,
    Final,
}

impl TemplateId {
    pub const ALL: [TemplateId; 6] = [
        TemplateId::Part1,
        TemplateId::Part2,
        TemplateId::Part3,
        TemplateId::Part4,
        TemplateId::Part5,
        TemplateId::Final,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Part1 => "part1",
            TemplateId::Part2 => "part2",
            TemplateId::Part3 => "part3",
            TemplateId::Part4 => "part4",
            TemplateId::Part5 => "part5",
            TemplateId::Final => "final",
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("call exceeded its deadline after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("script has no response left for ({template}, clip {clip:?})")]
    ScriptExhausted { template: TemplateId, clip: Option<usize> },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("malformed endpoint reply: {0}")]
    Reply(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReasonerRequest {
    pub template: TemplateId,
    pub prompt: String,
    /// 1-based clip the request concerns, if any.
    pub clip: Option<usize>,
    /// Clip content as text: a caption, or a compact rendering of frame tokens.
    pub payload: Option<String>,
    pub max_tokens: u32,
    pub temperature: f64,
    pub seed: Option<u64>,
}

impl ReasonerRequest {
    pub fn new(template: TemplateId, prompt: String) -> Self {
        Self {
            template,
            prompt,
            clip: None,
            payload: None,
            max_tokens: 1024,
            temperature: 0.0,
            seed: None,
        }
    }

    pub fn with_clip(mut self, clip: usize) -> Self {
        self.clip = Some(clip);
        self
    }

    pub fn with_payload(mut self, payload: String) -> Self {
        self.payload = Some(payload);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.trim().is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        Ok(())
    }
}

/// Raw reply text from one logical call, possibly after retries.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReasonerResponse {
    pub raw_text: String,
    /// Extracted JSON object, present only when extraction succeeded.
    pub parsed: Option<Value>,
    pub latency_ms: u64,
    pub attempts: u32,
}

impl ReasonerResponse {
    /// The parsed payload, or the extraction error with the raw text attached.
    pub fn json(&self) -> Result<&Value, SchemaError> {
        match &self.parsed {
            Some(v) => Ok(v),
            None => Err(extract_json(&self.raw_text).expect_err("parse failed before")),
        }
    }
}

/// A backend that can answer protocol prompts. Handles are shared across threads.
pub trait Reasoner: Send + Sync {
    fn complete(&self, request: &ReasonerRequest) -> Result<Completion, BackendError>;
}

impl<R: Reasoner + ?Sized> Reasoner for &R {
    fn complete(&self, request: &ReasonerRequest) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }
}

impl<R: Reasoner + ?Sized> Reasoner for Box<R> {
    fn complete(&self, request: &ReasonerRequest) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }
}

impl<R: Reasoner + ?Sized> Reasoner for std::sync::Arc<R> {
    fn complete(&self, request: &ReasonerRequest) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }
}

/// Sends one request and runs JSON extraction on the reply.
pub fn invoke<R: Reasoner + ?Sized>(backend: &R, request: &ReasonerRequest) -> Result<ReasonerResponse, BackendError> {
    request.validate()?;
    let start = Instant::now();
    let done = backend.complete(request)?;
    let latency_ms = start.elapsed().as_millis() as u64;
    let parsed = extract_json(&done.text).ok();
    Ok(ReasonerResponse {
        raw_text: done.text,
        parsed,
        latency_ms,
        attempts: done.attempts,
    })
}

/// Compact text rendering of a frame-token matrix stack for text-only endpoints.
pub fn render_tokens(frames: &[crate::stream::FrameTokens], max_values: usize) -> String {
    let (rows, d) = frames.first().map(|f| f.0.dim()).unwrap_or((0, 0));
    let mut out = format!("tokens {}x{}x{}:", frames.len(), rows, d);
    let total = frames.len() * rows * d;
    for (k, v) in frames.iter().flat_map(|f| f.0.iter()).take(max_values).enumerate() {
        out.push(if k == 0 { ' ' } else { ',' });
        out.push_str(&format!("{v:.3}"));
    }
    if total > max_values {
        out.push_str(&format!(",... ({} more)", total - max_values));
    }
    out
}
