//! Batch evaluation over a generated dataset directory.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atdm::{run_episode, AtdmConfig, DecisionTrace};
use crate::backend::{Reasoner, ScriptedOracle};
use crate::stream::{load_stream, IngestMode, QueryEpisode};

use super::generate::Manifest;
use super::EvalError;

pub const ACCURACY_CONVENTION: &str = "correct / total; unresolved and failed episodes count as incorrect";

/// Where episode replies come from.
#[derive(Clone)]
pub enum BackendChoice {
    /// Each episode's own `script.json`.
    Scripted,
    /// One shared backend for every episode.
    Shared(Arc<dyn Reasoner>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub id: String,
    pub answered: bool,
    pub correct: bool,
    pub t_r: Option<f64>,
    pub t_star: f64,
    pub delta: Option<f64>,
    pub answer_clip: Option<usize>,
    pub backend_calls: usize,
    pub reflections: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub total: usize,
    pub answered: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub mean_delta: Option<f64>,
    pub median_delta: Option<f64>,
    pub unresolved: usize,
    pub failed: usize,
    pub mean_backend_calls: f64,
}

impl Aggregates {
    pub fn from_rows(rows: &[EpisodeRow]) -> Self {
        let total = rows.len();
        let mut deltas: Vec<f64> = rows.iter().filter_map(|r| r.delta).collect();
        deltas.sort_by(f64::total_cmp);
        let mean_delta = (!deltas.is_empty()).then(|| deltas.iter().sum::<f64>() / deltas.len() as f64);
        let median_delta = match deltas.len() {
            0 => None,
            n if n % 2 == 1 => Some(deltas[n / 2]),
            n => Some((deltas[n / 2 - 1] + deltas[n / 2]) / 2.0),
        };
        let ran: Vec<&EpisodeRow> = rows.iter().filter(|r| r.error.is_none()).collect();
        let correct = rows.iter().filter(|r| r.correct).count();
        Self {
            total,
            answered: rows.iter().filter(|r| r.answered).count(),
            correct,
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            mean_delta,
            median_delta,
            unresolved: ran.iter().filter(|r| !r.answered).count(),
            failed: total - ran.len(),
            mean_backend_calls: if ran.is_empty() {
                0.0
            } else {
                ran.iter().map(|r| r.backend_calls).sum::<usize>() as f64 / ran.len() as f64
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy_convention: String,
    pub aggregates: Aggregates,
    pub episodes: Vec<EpisodeRow>,
}

impl EvalReport {
    pub fn from_rows(episodes: Vec<EpisodeRow>) -> Self {
        Self {
            accuracy_convention: ACCURACY_CONVENTION.to_string(),
            aggregates: Aggregates::from_rows(&episodes),
            episodes,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn normalize_answer(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Exact match after whitespace and case folding; a bare option letter also
/// matches an option that starts with it.
pub fn answer_matches(answer: &str, episode: &QueryEpisode) -> bool {
    let a = normalize_answer(answer);
    let gt = normalize_answer(&episode.answer_gt);
    if a == gt {
        return true;
    }
    let letter = a.trim_end_matches(['.', ')']);
    letter.len() == 1 && (gt.starts_with(&format!("{letter}.")) || gt.starts_with(&format!("{letter})")))
}

fn run_one(dir: &Path, backend: &BackendChoice, cfg: AtdmConfig) -> Result<(QueryEpisode, DecisionTrace), EvalError> {
    let stream = load_stream(&dir.join("stream.jsonl"), IngestMode::Caption)?;
    let episode = QueryEpisode::load(&dir.join("episode.json"))?;
    let trace = match backend {
        BackendChoice::Scripted => {
            let oracle = ScriptedOracle::from_file(&dir.join("script.json"))?;
            run_episode(&stream, &episode, &oracle, cfg, None)?
        }
        BackendChoice::Shared(b) => run_episode(&stream, &episode, b.as_ref(), cfg, None)?,
    };
    Ok((episode, trace))
}

fn row(id: &str, t_star_hint: f64, outcome: &Result<(QueryEpisode, DecisionTrace), EvalError>) -> EpisodeRow {
    match outcome {
        Ok((episode, trace)) => {
            let answered = trace.timing.answered;
            EpisodeRow {
                id: id.to_string(),
                answered,
                correct: answered
                    && trace
                        .timing
                        .answer_text
                        .as_deref()
                        .is_some_and(|a| answer_matches(a, episode)),
                t_r: trace.timing.t_r,
                t_star: episode.t_star,
                delta: trace.timing.delta,
                answer_clip: trace.answer_clip,
                backend_calls: trace.backend_calls,
                reflections: trace.reflections,
                error: None,
            }
        }
        Err(e) => EpisodeRow {
            id: id.to_string(),
            answered: false,
            correct: false,
            t_r: None,
            t_star: t_star_hint,
            delta: None,
            answer_clip: None,
            backend_calls: 0,
            reflections: 0,
            error: Some(e.to_string()),
        },
    }
}

/// Runs every episode listed in `dir/manifest.json`, in parallel, and keeps
/// the per-episode traces (`None` for failed episodes).
pub fn evaluate_traces(
    dir: &Path,
    backend: &BackendChoice,
    cfg: AtdmConfig,
) -> Result<(EvalReport, Vec<Option<DecisionTrace>>), EvalError> {
    cfg.validate()?;
    let manifest = Manifest::load(dir)?;
    let results: Vec<(EpisodeRow, Option<DecisionTrace>)> = manifest
        .episodes
        .par_iter()
        .map(|m| {
            let outcome = run_one(&dir.join(&m.id), backend, cfg);
            if let Err(e) = &outcome {
                log::warn!("episode {} failed: {e}", m.id);
            }
            let r = row(&m.id, m.t_star, &outcome);
            (r, outcome.ok().map(|(_, t)| t))
        })
        .collect();
    let (rows, traces) = results.into_iter().unzip();
    Ok((EvalReport::from_rows(rows), traces))
}

pub fn evaluate(dir: &Path, backend: &BackendChoice, cfg: AtdmConfig) -> Result<EvalReport, EvalError> {
    evaluate_traces(dir, backend, cfg).map(|(r, _)| r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{generate_dataset, DatasetOptions};

    fn row(delta: Option<f64>, correct: bool, error: bool) -> EpisodeRow {
        EpisodeRow {
            id: "x".into(),
            answered: delta.is_some(),
            correct,
            t_r: delta,
            t_star: 0.0,
            delta,
            answer_clip: None,
            backend_calls: 4,
            reflections: 0,
            error: error.then(|| "boom".into()),
        }
    }

    #[test]
    fn aggregates_follow_convention() {
        let a = Aggregates::from_rows(&[
            row(Some(0.0), true, false),
            row(Some(2.0), false, false),
            row(Some(4.0), true, false),
            row(None, false, false),
            row(None, false, true),
        ]);
        assert_eq!(a.accuracy, 0.4);
        assert_eq!(a.mean_delta, Some(2.0));
        assert_eq!(a.median_delta, Some(2.0));
        assert_eq!((a.unresolved, a.failed), (1, 1));
        assert_eq!(a.mean_backend_calls, 4.0);
    }

    #[test]
    fn option_letters_match() {
        let ep = QueryEpisode {
            query: "q".into(),
            t_q: 0.0,
            t_star: 1.0,
            answer_gt: "B. The dog waits".into(),
            options: None,
        };
        assert!(answer_matches("b. the  dog waits", &ep));
        assert!(answer_matches("B", &ep));
        assert!(!answer_matches("A", &ep));
    }

    #[test]
    fn scripted_dataset_with_unresolvable_episodes() {
        let dir = tempfile::tempdir().unwrap();
        let opts = DatasetOptions {
            count: 6,
            unresolvable: 2,
            drops: 2,
            ..DatasetOptions::default()
        };
        generate_dataset(dir.path(), &opts).unwrap();
        let (report, traces) = evaluate_traces(dir.path(), &BackendChoice::Scripted, AtdmConfig::default()).unwrap();
        let a = &report.aggregates;
        assert_eq!((a.total, a.unresolved, a.failed, a.correct), (6, 2, 0, 4));
        assert_eq!(a.mean_delta, Some(0.0));
        assert_eq!(traces.iter().flatten().map(|t| t.reflections).sum::<usize>(), 2);
    }

    #[test]
    fn missing_episode_is_recorded_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(dir.path(), &DatasetOptions { count: 2, ..DatasetOptions::default() }).unwrap();
        std::fs::remove_file(dir.path().join("ep_001/script.json")).unwrap();
        let report = evaluate(dir.path(), &BackendChoice::Scripted, AtdmConfig::default()).unwrap();
        assert_eq!(report.aggregates.failed, 1);
        assert!(report.episodes[1].error.is_some());
    }
}
