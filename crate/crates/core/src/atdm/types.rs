use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};

use super::AtdmConfig;

pub const UNKNOWN: &str = "?";
pub const MAX_REQUIREMENTS: usize = 5;
pub const MAX_CAPTION_WORDS: usize = 500;

/// What a caption must pay attention to for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionInstructions {
    pub question: String,
    pub requirements: Vec<String>,
}

impl CaptionInstructions {
    pub fn new(question: &str, requirements: Vec<String>) -> Result<Self, String> {
        if requirements.is_empty() {
            return Err("no caption requirements".into());
        }
        if requirements.len() > MAX_REQUIREMENTS {
            return Err(format!(
                "{} caption requirements, at most {MAX_REQUIREMENTS} allowed",
                requirements.len()
            ));
        }
        if requirements.iter().any(|r| r.trim().is_empty()) {
            return Err("empty caption requirement".into());
        }
        Ok(Self {
            question: question.to_string(),
            requirements,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SubQuestionType {
    Object,
    Attribute,
    Person,
    Action,
    Scene,
    Event,
    TemporalChange,
    SpatialRelation,
    CausalRelation,
    Count,
    Other,
}

impl SubQuestionType {
    pub const ALL: [SubQuestionType; 11] = [
        SubQuestionType::Object,
        SubQuestionType::Attribute,
        SubQuestionType::Person,
        SubQuestionType::Action,
        SubQuestionType::Scene,
        SubQuestionType::Event,
        SubQuestionType::TemporalChange,
        SubQuestionType::SpatialRelation,
        SubQuestionType::CausalRelation,
        SubQuestionType::Count,
        SubQuestionType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SubQuestionType::Object => "object",
            SubQuestionType::Attribute => "attribute",
            SubQuestionType::Person => "person",
            SubQuestionType::Action => "action",
            SubQuestionType::Scene => "scene",
            SubQuestionType::Event => "event",
            SubQuestionType::TemporalChange => "temporal_change",
            SubQuestionType::SpatialRelation => "spatial_relation",
            SubQuestionType::CausalRelation => "causal_relation",
            SubQuestionType::Count => "count",
            SubQuestionType::Other => "other",
        }
    }
}

impl fmt::Display for SubQuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SubQuestionType {
    type Err = String;

    /// Accepts either spelling of multi-word types ("temporal change" or "temporal_change").
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == norm)
            .ok_or_else(|| format!("unknown sub-question type {s:?}"))
    }
}

impl Serialize for SubQuestionType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for SubQuestionType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubQuestion {
    #[serde(rename = "type")]
    pub kind: SubQuestionType,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubQuestionSet {
    pub items: Vec<SubQuestion>,
}

impl SubQuestionSet {
    pub fn new(items: Vec<SubQuestion>) -> Result<Self, String> {
        if items.is_empty() {
            return Err("no sub-questions".into());
        }
        if let Some(q) = items.iter().find(|q| q.question.trim().is_empty()) {
            return Err(format!("empty {} sub-question", q.kind));
        }
        Ok(Self { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Index of the sub-question a reply entry refers to: exact text, then
    /// case-insensitive text, then a type that only one sub-question has.
    pub fn resolve(&self, key: &str, kind: Option<SubQuestionType>) -> Option<usize> {
        if let Some(i) = self.items.iter().position(|q| q.question == key) {
            return Some(i);
        }
        let folded = key.trim().to_lowercase();
        if let Some(i) = self
            .items
            .iter()
            .position(|q| q.question.trim().to_lowercase() == folded)
        {
            return Some(i);
        }
        let kind = kind.or_else(|| key.parse().ok())?;
        let mut hits = self.items.iter().enumerate().filter(|(_, q)| q.kind == kind);
        match (hits.next(), hits.next()) {
            (Some((i, _)), None) => Some(i),
            _ => None,
        }
    }
}

/// Formats whole seconds as `H:MM:SS`.
pub fn format_hms(seconds: f64) -> String {
    let s = seconds.max(0.0) as u64;
    format!("{}:{:02}:{:02}", s / 3600, (s / 60) % 60, s % 60)
}

/// Clip timestamp label `H:MM:SS-H:MM:SS`; the end is rounded up to a whole second.
pub fn clip_timestamp(t_start: f64, t_end: f64) -> String {
    format!("{}-{}", format_hms(t_start.floor()), format_hms(t_end.ceil()))
}

fn parse_hms(s: &str) -> Option<u64> {
    let parts: Vec<&str> = s.trim().split(':').collect();
    if parts.is_empty() || parts.len() > 3 {
        return None;
    }
    parts.iter().try_fold(0u64, |acc, p| {
        let v: u64 = p.parse().ok()?;
        acc.checked_mul(60)?.checked_add(v)
    })
}

/// Parses `H:MM:SS-H:MM:SS` into whole-second bounds.
pub fn parse_timestamp(s: &str) -> Option<(u64, u64)> {
    let (a, b) = s.split_once('-')?;
    let (a, b) = (parse_hms(a)?, parse_hms(b)?);
    (a < b).then_some((a, b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipCaption {
    pub clip_timestamp: String,
    pub caption: String,
}

impl ClipCaption {
    pub fn validate(&self) -> Result<(), String> {
        if self.caption.trim().is_empty() {
            return Err("empty caption".into());
        }
        let words = self.caption.split_whitespace().count();
        if words > MAX_CAPTION_WORDS {
            return Err(format!("caption has {words} words, limit is {MAX_CAPTION_WORDS}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubAnswer {
    #[serde(rename = "type")]
    pub kind: SubQuestionType,
    pub question: String,
    pub value: String,
    pub confidence: f64,
}

impl SubAnswer {
    pub fn is_known(&self) -> bool {
        self.value != UNKNOWN
    }
}

/// Per-sub-question answers and the locally computed progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubAnswerState {
    pub answers: Vec<SubAnswer>,
    pub rho: f64,
    /// Progress as reported by the backend, in `[0, 1]`; advisory only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reported_progress: Option<f64>,
}

impl SubAnswerState {
    /// Every sub-question unanswered.
    pub fn initial(subqs: &SubQuestionSet) -> Self {
        Self {
            answers: subqs
                .items
                .iter()
                .map(|q| SubAnswer {
                    kind: q.kind,
                    question: q.question.clone(),
                    value: UNKNOWN.into(),
                    confidence: 0.0,
                })
                .collect(),
            rho: 0.0,
            reported_progress: None,
        }
    }

    pub fn confidences(&self) -> Vec<f64> {
        self.answers.iter().map(|a| a.confidence).collect()
    }

    /// Enforces "?" means zero confidence, then recomputes progress.
    ///
    /// With the binary gate, confidences collapse to 0/1 answerable flags and
    /// progress is 1 only when every sub-question has a value.
    pub fn normalize(&mut self, cfg: &AtdmConfig) {
        for a in &mut self.answers {
            if !a.is_known() {
                a.confidence = 0.0;
            } else if cfg.binary_gate {
                a.confidence = 1.0;
            }
        }
        self.rho = progress(&self.confidences(), cfg);
    }

    /// The form fed back to the backend as the latest state.
    pub fn to_prompt_json(&self) -> Value {
        json!({
            "subquestion_status": self.answers,
            "estimated_progress": (self.rho * 100.0).round() as i64,
        })
    }
}

/// Fraction of confidences at or above the answer threshold.
pub fn progress(confidences: &[f64], cfg: &AtdmConfig) -> f64 {
    if confidences.is_empty() {
        return 0.0;
    }
    if cfg.binary_gate {
        return if confidences.iter().all(|&c| c >= 1.0) { 1.0 } else { 0.0 };
    }
    let hit = confidences.iter().filter(|&&c| c >= cfg.theta_ans).count();
    hit as f64 / confidences.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReflectionStatus {
    Upgraded,
    Downgraded,
    Unchanged,
    NewlyAdded,
}

impl FromStr for ReflectionStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace([' ', '-'], "_").as_str() {
            "upgraded" => Ok(Self::Upgraded),
            "downgraded" => Ok(Self::Downgraded),
            "unchanged" => Ok(Self::Unchanged),
            "newly_added" => Ok(Self::NewlyAdded),
            _ => Err(format!("unknown reflection status {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeUpdate {
    /// The key the backend used: sub-question text or type name.
    pub attribute: String,
    pub value: String,
    pub confidence: f64,
    pub status: ReflectionStatus,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionReport {
    pub causal_chain: Vec<String>,
    pub attribute_status: Vec<AttributeUpdate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimated_progress: Option<f64>,
}
