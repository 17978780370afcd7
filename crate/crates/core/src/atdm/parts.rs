//! The five protocol parts plus final-answer composition.
//!
//! Each part is split into a pure parser over the reply text and a thin
//! wrapper that renders the prompt and calls the backend.

use serde_json::{Map, Value};

use crate::backend::{invoke, extract_json, render_tokens, Reasoner, ReasonerRequest, SchemaError, TemplateId};
use crate::stream::{Clip, ClipContent, QueryEpisode};

use super::prompts;
use super::types::{
    clip_timestamp, parse_timestamp, AttributeUpdate, CaptionInstructions, ClipCaption, ReflectionReport,
    ReflectionStatus, SubAnswerState, SubQuestion, SubQuestionSet, SubQuestionType, UNKNOWN,
};
use super::{AtdmConfig, AtdmError};

/// Keeps a drop of exactly `theta_drop` (up to rounding) from counting as larger.
const DROP_EPS: f64 = 1e-9;

/// Frame values rendered into a feature-mode caption prompt.
const TOKEN_PREVIEW: usize = 64;

fn object(raw: &str) -> Result<Map<String, Value>, SchemaError> {
    match extract_json(raw)? {
        Value::Object(m) => Ok(m),
        _ => Err(SchemaError::new("reply is not a JSON object", raw)),
    }
}

/// First present key among `names`.
fn field<'a>(m: &'a Map<String, Value>, names: &[&str]) -> Option<&'a Value> {
    names.iter().find_map(|n| m.get(*n))
}

fn string_field(m: &Map<String, Value>, names: &[&str], raw: &str) -> Result<String, SchemaError> {
    match field(m, names) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(Value::Bool(b)) => Ok(if *b { "yes" } else { "no" }.to_string()),
        _ => Err(SchemaError::new(format!("missing string field {:?}", names[0]), raw)),
    }
}

fn confidence(v: Option<&Value>, raw: &str) -> Result<f64, SchemaError> {
    let c = match v {
        Some(Value::Number(n)) => n.as_f64(),
        Some(Value::String(s)) => s.trim().parse().ok(),
        _ => None,
    }
    .ok_or_else(|| SchemaError::new("missing or non-numeric confidence", raw))?;
    if !(0.0..=1.0).contains(&c) {
        return Err(SchemaError::new(format!("confidence {c} outside [0, 1]"), raw));
    }
    Ok(c)
}

/// Reported progress in `[0, 1]` from a 0-100 number or a string such as `"75%"`.
fn reported_progress(v: Option<&Value>) -> Option<f64> {
    let p = match v? {
        Value::Number(n) => n.as_f64()?,
        Value::String(s) => {
            let t = s.trim().trim_end_matches('%').trim();
            t.parse().ok()?
        }
        _ => return None,
    };
    (p.is_finite() && (0.0..=100.0).contains(&p)).then_some(p / 100.0)
}

pub fn parse_part1(raw: &str, question: &str) -> Result<CaptionInstructions, SchemaError> {
    let m = object(raw)?;
    let list = field(&m, &["caption_requirements", "caption requirements", "requirements"])
        .and_then(Value::as_array)
        .ok_or_else(|| SchemaError::new("missing caption_requirements list", raw))?;
    let reqs = list
        .iter()
        .map(|v| v.as_str().map(str::to_string))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| SchemaError::new("caption requirements must be strings", raw))?;
    CaptionInstructions::new(question, reqs).map_err(|e| SchemaError::new(e, raw))
}

pub fn parse_part2(raw: &str) -> Result<SubQuestionSet, SchemaError> {
    let m = object(raw)?;
    let list = field(
        &m,
        &["required_subquestions", "required subquestions", "required_attributes", "subquestions"],
    )
    .and_then(Value::as_array)
    .ok_or_else(|| SchemaError::new("missing required_subquestions list", raw))?;
    let mut items = Vec::with_capacity(list.len());
    for item in list {
        let o = item
            .as_object()
            .ok_or_else(|| SchemaError::new("sub-question entry is not an object", raw))?;
        let kind: SubQuestionType = string_field(o, &["type"], raw)?
            .parse()
            .map_err(|e: String| SchemaError::new(e, raw))?;
        let question = string_field(o, &["question", "description"], raw)?;
        items.push(SubQuestion { kind, question });
    }
    SubQuestionSet::new(items).map_err(|e| SchemaError::new(e, raw))
}

/// Parses a caption reply and binds it to `clip`'s canonical timestamp.
pub fn parse_part3(raw: &str, clip: &Clip) -> Result<ClipCaption, SchemaError> {
    let m = object(raw)?;
    let caption = string_field(&m, &["caption"], raw)?;
    let expected = clip_timestamp(clip.t_start, clip.t_end);
    if let Some(Value::String(ts)) = m.get("clip_timestamp") {
        if parse_timestamp(ts) != parse_timestamp(&expected) {
            log::warn!("clip {}: reply timestamp {ts:?} rebound to {expected}", clip.index);
        }
    }
    let c = ClipCaption {
        clip_timestamp: expected,
        caption,
    };
    c.validate().map_err(|e| SchemaError::new(e, raw))?;
    Ok(c)
}

/// One entry of a sub-answer reply, before it is matched to a sub-question.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplyEntry {
    pub kind: Option<SubQuestionType>,
    pub question: String,
    pub value: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Part4Reply {
    pub entries: Vec<ReplyEntry>,
    pub estimated_progress: Option<f64>,
}

pub fn parse_part4(raw: &str) -> Result<Part4Reply, SchemaError> {
    let m = object(raw)?;
    let list = field(&m, &["subquestion_status", "subquestion status"])
        .and_then(Value::as_array)
        .ok_or_else(|| SchemaError::new("missing subquestion_status list", raw))?;
    let mut entries = Vec::with_capacity(list.len());
    for item in list {
        let o = item
            .as_object()
            .ok_or_else(|| SchemaError::new("status entry is not an object", raw))?;
        let kind = match o.get("type").and_then(Value::as_str) {
            Some(t) => Some(t.parse().map_err(|e: String| SchemaError::new(e, raw))?),
            None => None,
        };
        entries.push(ReplyEntry {
            kind,
            question: string_field(o, &["question", "description"], raw)?,
            value: string_field(o, &["value"], raw)?,
            confidence: confidence(o.get("confidence"), raw)?,
        });
    }
    Ok(Part4Reply {
        entries,
        estimated_progress: reported_progress(m.get("estimated_progress")),
    })
}

/// Applies a sub-answer reply to `prior`. Sub-questions the reply omits keep
/// their prior answer; progress is always recomputed here.
pub fn apply_part4(
    subqs: &SubQuestionSet,
    prior: &SubAnswerState,
    reply: &Part4Reply,
    cfg: &AtdmConfig,
) -> Result<SubAnswerState, AtdmError> {
    let mut next = prior.clone();
    let mut seen = vec![false; subqs.len()];
    for e in &reply.entries {
        let i = subqs
            .resolve(&e.question, e.kind)
            .ok_or_else(|| AtdmError::Index(format!("reply answers unknown sub-question {:?}", e.question)))?;
        if std::mem::replace(&mut seen[i], true) {
            return Err(AtdmError::Index(format!("sub-question {:?} answered twice", subqs.items[i].question)));
        }
        let a = &mut next.answers[i];
        a.value = e.value.trim().to_string();
        if a.value.is_empty() {
            a.value = UNKNOWN.into();
        }
        a.confidence = e.confidence;
    }
    next.reported_progress = reply.estimated_progress;
    next.normalize(cfg);
    if let Some(p) = next.reported_progress {
        if (p - next.rho).abs() > 1e-9 {
            log::info!("reported progress {p:.2} differs from computed {:.2}", next.rho);
        }
    }
    Ok(next)
}

pub fn parse_part5(raw: &str) -> Result<ReflectionReport, SchemaError> {
    let m = object(raw)?;
    let chain = match m.get("causal_chain") {
        Some(Value::Array(a)) => a
            .iter()
            .map(|v| v.as_str().map(str::to_string))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| SchemaError::new("causal_chain entries must be strings", raw))?,
        None => Vec::new(),
        Some(_) => return Err(SchemaError::new("causal_chain must be a list", raw)),
    };
    let status = m
        .get("attribute_status")
        .and_then(Value::as_object)
        .ok_or_else(|| SchemaError::new("missing attribute_status object", raw))?;
    let mut updates = Vec::with_capacity(status.len());
    for (key, v) in status {
        let o = v
            .as_object()
            .ok_or_else(|| SchemaError::new(format!("attribute {key:?} is not an object"), raw))?;
        let st: ReflectionStatus = string_field(o, &["status"], raw)?
            .parse()
            .map_err(|e: String| SchemaError::new(e, raw))?;
        updates.push(AttributeUpdate {
            attribute: key.clone(),
            value: string_field(o, &["value"], raw)?,
            confidence: confidence(o.get("confidence"), raw)?,
            status: st,
            note: o.get("note").and_then(Value::as_str).unwrap_or_default().to_string(),
        });
    }
    Ok(ReflectionReport {
        causal_chain: chain,
        attribute_status: updates,
        estimated_progress: reported_progress(m.get("estimated_progress")),
    })
}

/// Merges a reflection report into `prior`.
///
/// `unchanged` entries keep the prior value and confidence exactly; claiming
/// `unchanged` with a different value is a merge error. New attributes that
/// match no sub-question are ignored, since the sub-question set is fixed.
pub fn merge_reflection(
    subqs: &SubQuestionSet,
    prior: &SubAnswerState,
    report: &ReflectionReport,
    cfg: &AtdmConfig,
) -> Result<SubAnswerState, AtdmError> {
    let mut next = prior.clone();
    for u in &report.attribute_status {
        let Some(i) = subqs.resolve(&u.attribute, None) else {
            if u.status == ReflectionStatus::NewlyAdded {
                log::info!("ignoring newly added attribute {:?}", u.attribute);
                continue;
            }
            return Err(AtdmError::Merge(format!("attribute {:?} matches no sub-question", u.attribute)));
        };
        let a = &mut next.answers[i];
        match u.status {
            ReflectionStatus::Unchanged => {
                if u.value.trim() != a.value {
                    return Err(AtdmError::Merge(format!(
                        "attribute {:?} marked unchanged but value {:?} differs from {:?}",
                        u.attribute, u.value, a.value
                    )));
                }
                if u.confidence != a.confidence {
                    log::info!("unchanged attribute {:?} reported a different confidence", u.attribute);
                }
            }
            _ => {
                a.value = u.value.trim().to_string();
                if a.value.is_empty() {
                    a.value = UNKNOWN.into();
                }
                a.confidence = u.confidence;
            }
        }
    }
    next.reported_progress = report.estimated_progress;
    next.normalize(cfg);
    Ok(next)
}

/// Whether reflection should run after the latest state in `history`.
///
/// Fires on a confidence drop larger than `theta_drop` between the last two
/// states, or when some answered sub-question has stayed at or below the low
/// bar for the last `w_low` states.
pub fn reflection_trigger(history: &[SubAnswerState], cfg: &AtdmConfig) -> bool {
    let n = history.len();
    if n >= 2 {
        let (prev, cur) = (&history[n - 2], &history[n - 1]);
        let dropped = prev
            .answers
            .iter()
            .zip(&cur.answers)
            .any(|(p, c)| p.confidence - c.confidence > cfg.theta_drop + DROP_EPS);
        if dropped {
            return true;
        }
    }
    let w = cfg.w_low;
    if w == 0 || n < w {
        return false;
    }
    let window = &history[n - w..];
    let k = window[0].answers.len();
    (0..k).any(|s| {
        window.iter().all(|st| {
            st.answers
                .get(s)
                .is_some_and(|a| a.is_known() && a.confidence <= cfg.low_bar)
        })
    })
}

fn request(template: TemplateId, prompt: String, cfg: &AtdmConfig) -> ReasonerRequest {
    ReasonerRequest::new(template, prompt).with_seed(cfg.seed)
}

pub fn part1_instructions<R: Reasoner + ?Sized>(
    query: &str,
    backend: &R,
    cfg: &AtdmConfig,
) -> Result<CaptionInstructions, AtdmError> {
    if query.trim().is_empty() {
        return Err(AtdmError::Config("empty query".into()));
    }
    let resp = invoke(backend, &request(TemplateId::Part1, prompts::render_part1(query), cfg))?;
    Ok(parse_part1(&resp.raw_text, query)?)
}

pub fn part2_decompose<R: Reasoner + ?Sized>(
    query: &str,
    backend: &R,
    cfg: &AtdmConfig,
) -> Result<SubQuestionSet, AtdmError> {
    if query.trim().is_empty() {
        return Err(AtdmError::Config("empty query".into()));
    }
    let resp = invoke(backend, &request(TemplateId::Part2, prompts::render_part2(query), cfg))?;
    Ok(parse_part2(&resp.raw_text)?)
}

/// Text the backend sees for a clip: its caption, or a compact token rendering.
pub fn clip_payload(clip: &Clip) -> String {
    match &clip.content {
        ClipContent::Caption(c) => c.clone(),
        ClipContent::Frames(f) => render_tokens(f, TOKEN_PREVIEW),
    }
}

pub fn part3_caption<R: Reasoner + ?Sized>(
    clip: &Clip,
    instructions: &CaptionInstructions,
    backend: &R,
    cfg: &AtdmConfig,
) -> Result<ClipCaption, AtdmError> {
    let payload = clip_payload(clip);
    let ts = clip_timestamp(clip.t_start, clip.t_end);
    let prompt = prompts::render_part3(&instructions.requirements, &payload, &ts);
    let req = request(TemplateId::Part3, prompt, cfg)
        .with_clip(clip.index)
        .with_payload(payload);
    let resp = invoke(backend, &req)?;
    Ok(parse_part3(&resp.raw_text, clip)?)
}

pub fn part4_update<R: Reasoner + ?Sized>(
    query: &str,
    subqs: &SubQuestionSet,
    prior: &SubAnswerState,
    caption: &ClipCaption,
    clip: usize,
    backend: &R,
    cfg: &AtdmConfig,
) -> Result<SubAnswerState, AtdmError> {
    if prior.answers.len() != subqs.len()
        || prior.answers.iter().zip(&subqs.items).any(|(a, q)| a.question != q.question)
    {
        return Err(AtdmError::Index("prior state is not indexed like the sub-questions".into()));
    }
    let prompt = prompts::render_part4(query, prior, &caption.caption);
    let resp = invoke(backend, &request(TemplateId::Part4, prompt, cfg).with_clip(clip))?;
    let reply = parse_part4(&resp.raw_text)?;
    apply_part4(subqs, prior, &reply, cfg)
}

pub fn part5_reflect<R: Reasoner + ?Sized>(
    query: &str,
    subqs: &SubQuestionSet,
    state: &SubAnswerState,
    history: &[ClipCaption],
    clip: usize,
    backend: &R,
    cfg: &AtdmConfig,
) -> Result<(ReflectionReport, SubAnswerState), AtdmError> {
    let prompt = prompts::render_part5(query, state, history);
    let resp = invoke(backend, &request(TemplateId::Part5, prompt, cfg).with_clip(clip))?;
    let report = parse_part5(&resp.raw_text)?;
    let merged = merge_reflection(subqs, state, &report, cfg)?;
    Ok((report, merged))
}

pub fn parse_final(raw: &str) -> Result<String, SchemaError> {
    let m = object(raw)?;
    let a = string_field(&m, &["answer", "final_answer"], raw)?;
    if a.trim().is_empty() {
        return Err(SchemaError::new("empty answer", raw));
    }
    Ok(a.trim().to_string())
}

pub fn compose_answer<R: Reasoner + ?Sized>(
    episode: &QueryEpisode,
    state: &SubAnswerState,
    clip: usize,
    backend: &R,
    cfg: &AtdmConfig,
) -> Result<String, AtdmError> {
    let prompt = prompts::render_final(&episode.query, episode.options.as_deref(), state);
    let resp = invoke(backend, &request(TemplateId::Final, prompt, cfg).with_clip(clip))?;
    Ok(parse_final(&resp.raw_text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atdm::types::SubAnswer;

    fn state(cs: &[(f64, bool)]) -> SubAnswerState {
        SubAnswerState {
            answers: cs
                .iter()
                .enumerate()
                .map(|(i, &(c, known))| SubAnswer {
                    kind: SubQuestionType::Other,
                    question: format!("q{i}"),
                    value: if known { "v".into() } else { UNKNOWN.into() },
                    confidence: c,
                })
                .collect(),
            rho: 0.0,
            reported_progress: None,
        }
    }

    fn subqs(k: usize) -> SubQuestionSet {
        SubQuestionSet::new(
            (0..k)
                .map(|i| SubQuestion {
                    kind: SubQuestionType::Other,
                    question: format!("q{i}"),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn drop_triggers() {
        let cfg = AtdmConfig::default();
        assert!(reflection_trigger(&[state(&[(0.8, true)]), state(&[(0.4, true)])], &cfg));
        // a drop of exactly theta is not "more than" theta
        assert!(!reflection_trigger(&[state(&[(0.9, true)]), state(&[(0.6, true)])], &cfg));
    }

    #[test]
    fn monotone_high_does_not_trigger() {
        let cfg = AtdmConfig::default();
        let h = [state(&[(0.6, true)]), state(&[(0.7, true)]), state(&[(0.9, true)])];
        assert!(!reflection_trigger(&h, &cfg));
    }

    #[test]
    fn persistent_low_triggers_after_window() {
        let cfg = AtdmConfig::default();
        assert!(!reflection_trigger(&[state(&[(0.45, true)])], &cfg));
        assert!(reflection_trigger(&[state(&[(0.45, true)]), state(&[(0.45, true)])], &cfg));
        assert!(reflection_trigger(&[state(&[(0.5, true)]), state(&[(0.5, true)])], &cfg));
        // unanswered sub-questions are not "low confidence answers"
        assert!(!reflection_trigger(&[state(&[(0.0, false)]), state(&[(0.0, false)])], &cfg));
    }

    #[test]
    fn part4_reply_without_a_subquestion_keeps_prior() {
        let cfg = AtdmConfig::default();
        let set = subqs(2);
        let prior = SubAnswerState::initial(&set);
        let reply = parse_part4(r#"{"subquestion_status":[{"type":"other","question":"q1","value":"x","confidence":0.9}],"estimated_progress":50}"#).unwrap();
        let next = apply_part4(&set, &prior, &reply, &cfg).unwrap();
        assert_eq!(next.confidences(), vec![0.0, 0.9]);
        assert_eq!(next.rho, 0.5);
        assert_eq!(next.reported_progress, Some(0.5));
    }

    #[test]
    fn part4_unknown_subquestion_is_index_error() {
        let cfg = AtdmConfig::default();
        let set = SubQuestionSet::new(vec![
            SubQuestion { kind: SubQuestionType::Object, question: "q0".into() },
            SubQuestion { kind: SubQuestionType::Count, question: "q1".into() },
        ])
        .unwrap();
        let reply = parse_part4(r#"{"subquestion_status":[{"type":"scene","question":"elsewhere?","value":"x","confidence":0.9}]}"#).unwrap();
        let r = apply_part4(&set, &SubAnswerState::initial(&set), &reply, &cfg);
        assert!(matches!(r, Err(AtdmError::Index(_))));
    }

    #[test]
    fn part4_rejects_out_of_range_confidence() {
        assert!(parse_part4(r#"{"subquestion_status":[{"question":"q0","value":"x","confidence":1.5}]}"#).is_err());
        assert!(parse_part4(r#"{"subquestion_status":[{"question":"q0","value":"x"}]}"#).is_err());
    }

    #[test]
    fn unchanged_with_new_value_is_merge_error() {
        let cfg = AtdmConfig::default();
        let set = subqs(1);
        let mut prior = SubAnswerState::initial(&set);
        prior.answers[0].value = "a".into();
        prior.answers[0].confidence = 0.6;
        let report = parse_part5(r#"{"causal_chain":[],"attribute_status":{"q0":{"value":"b","confidence":0.6,"status":"unchanged","note":""}}}"#).unwrap();
        assert!(matches!(merge_reflection(&set, &prior, &report, &cfg), Err(AtdmError::Merge(_))));
    }

    #[test]
    fn progress_strings_are_advisory() {
        assert_eq!(reported_progress(Some(&Value::from("95%"))), Some(0.95));
        assert_eq!(reported_progress(Some(&Value::from("<percentage>"))), None);
        assert_eq!(reported_progress(Some(&Value::from(120))), None);
    }

    #[test]
    fn final_answer_parse() {
        assert_eq!(parse_final("Answer: {\"answer\": \" B \"}").unwrap(), "B");
        assert!(parse_final("{\"answer\": \"\"}").is_err());
    }
}
