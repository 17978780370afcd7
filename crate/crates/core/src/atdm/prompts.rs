//! Protocol prompt templates and their rendering.
//!
//! Templates are stored as text assets and rendered by plain marker
//! substitution, so a rendered prompt differs from its asset only at the
//! markers.

use crate::backend::TemplateId;

use super::types::{ClipCaption, SubAnswerState};

/// Bumped whenever an asset's bytes change.
pub const PROMPT_VERSION: &str = "1";

pub const PART1: &str = include_str!("../../assets/prompts/part1.txt");
pub const PART2: &str = include_str!("../../assets/prompts/part2.txt");
pub const PART3: &str = include_str!("../../assets/prompts/part3.txt");
pub const PART4: &str = include_str!("../../assets/prompts/part4.txt");
pub const PART5: &str = include_str!("../../assets/prompts/part5.txt");
pub const FINAL: &str = include_str!("../../assets/prompts/final.txt");

pub const QUESTION: &str = "<|Question|>";
pub const REQUIREMENTS: &str = "<|Caption Requirements List|>";
pub const VIDEO: &str = "<|Video|>";
pub const TIMESTAMP: &str = "{timestamp}";
pub const SUBQUESTIONS: &str = "<|Required Subquestions|>";
pub const CAPTION: &str = "<|Past caption|>";
pub const COT_STATE: &str = "<|Past CoT State|>";
pub const CLIP_CAPTIONS: &str = "<|Clip_Captions|>";
pub const OPTIONS: &str = "<|Options|>";
pub const SUB_ANSWERS: &str = "<|Sub-answers|>";

pub fn template(id: TemplateId) -> &'static str {
    match id {
        TemplateId::Part1 => PART1,
        TemplateId::Part2 => PART2,
        TemplateId::Part3 => PART3,
        TemplateId::Part4 => PART4,
        TemplateId::Part5 => PART5,
        TemplateId::Final => FINAL,
    }
}

fn fill(template: &str, subs: &[(&str, &str)]) -> String {
    subs.iter()
        .fold(template.to_string(), |acc, (marker, value)| acc.replace(marker, value))
}

fn state_json(state: &SubAnswerState) -> String {
    serde_json::to_string_pretty(&state.to_prompt_json()).expect("state serializes")
}

pub fn render_part1(question: &str) -> String {
    fill(PART1, &[(QUESTION, question)])
}

pub fn render_part2(question: &str) -> String {
    fill(PART2, &[(QUESTION, question)])
}

pub fn render_part3(requirements: &[String], video: &str, timestamp: &str) -> String {
    let list = requirements
        .iter()
        .map(|r| format!("- {r}"))
        .collect::<Vec<_>>()
        .join("\n");
    fill(PART3, &[(REQUIREMENTS, &list), (VIDEO, video), (TIMESTAMP, timestamp)])
}

pub fn render_part4(question: &str, prior: &SubAnswerState, caption: &str) -> String {
    fill(
        PART4,
        &[(QUESTION, question), (SUBQUESTIONS, &state_json(prior)), (CAPTION, caption)],
    )
}

pub fn render_part5(question: &str, state: &SubAnswerState, history: &[ClipCaption]) -> String {
    let captions = history
        .iter()
        .map(|c| format!("[{}] {}", c.clip_timestamp, c.caption))
        .collect::<Vec<_>>()
        .join("\n");
    fill(
        PART5,
        &[(QUESTION, question), (COT_STATE, &state_json(state)), (CLIP_CAPTIONS, &captions)],
    )
}

pub fn render_final(question: &str, options: Option<&[String]>, state: &SubAnswerState) -> String {
    let options = match options {
        Some(o) if !o.is_empty() => o.join("\n"),
        _ => "(free-form answer)".to_string(),
    };
    let answers = state
        .answers
        .iter()
        .map(|a| format!("- {} {} (confidence {:.2})", a.question, a.value, a.confidence))
        .collect::<Vec<_>>()
        .join("\n");
    fill(FINAL, &[(QUESTION, question), (OPTIONS, &options), (SUB_ANSWERS, &answers)])
}
