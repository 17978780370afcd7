use std::collections::VecDeque;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backend::{BackendError, Completion, Reasoner, ReasonerRequest};
use crate::stream::{Clip, ClipStream, QueryEpisode, TimingResult};

use super::parts::{compose_answer, part1_instructions, part2_decompose, part3_caption, part4_update, part5_reflect};
use super::types::{CaptionInstructions, ClipCaption, SubAnswerState, SubQuestionSet};
use super::{reflection_trigger, AtdmConfig, AtdmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Part1,
    Part2,
    Caption,
    Update,
    Reflect,
    Wait,
    Answer,
    Unresolved,
}

/// One NDJSON telemetry line. `t` is stream time, never wall-clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryEvent {
    pub t: f64,
    pub event: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<usize>,
    pub rho: f64,
    pub confidences: Vec<f64>,
    pub payload: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStatus {
    Answered,
    StreamEnded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTrace {
    pub status: TraceStatus,
    pub timing: TimingResult,
    pub answer_clip: Option<usize>,
    /// Backend calls whose results were used, including retries.
    pub backend_calls: usize,
    pub reflections: usize,
    pub events: Vec<TelemetryEvent>,
}

impl DecisionTrace {
    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.event == kind).count()
    }
}

/// Counts completed calls made through one logical operation.
struct Counted<'a, R: ?Sized> {
    inner: &'a R,
    calls: AtomicUsize,
}

impl<R: Reasoner + ?Sized> Reasoner for Counted<'_, R> {
    fn complete(&self, request: &ReasonerRequest) -> Result<Completion, BackendError> {
        let out = self.inner.complete(request)?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(out)
    }
}

/// Result of one operation allowed a single retry on a malformed reply.
struct Tried<T> {
    outcome: Result<T, AtdmError>,
    calls: usize,
}

fn tried<R, T>(backend: &R, what: &str, f: impl Fn(&Counted<'_, R>) -> Result<T, AtdmError>) -> Tried<T>
where
    R: Reasoner + ?Sized,
{
    let counted = Counted {
        inner: backend,
        calls: AtomicUsize::new(0),
    };
    let mut outcome = f(&counted);
    if let Err(e) = &outcome {
        if e.is_reply_error() {
            log::warn!("{what}: {e}; retrying once");
            outcome = f(&counted);
        }
    }
    Tried {
        outcome,
        calls: counted.calls.load(Ordering::Relaxed),
    }
}

fn caption_job<R: Reasoner + ?Sized>(
    clip: &Clip,
    instructions: &CaptionInstructions,
    backend: &R,
    cfg: &AtdmConfig,
) -> Tried<ClipCaption> {
    tried(backend, &format!("caption for clip {}", clip.index), |b| {
        part3_caption(clip, instructions, b, cfg)
    })
}

/// Episode state for one query over one stream.
pub struct Controller<'a, R: Reasoner + ?Sized> {
    backend: &'a R,
    cfg: AtdmConfig,
    episode: QueryEpisode,
    instructions: CaptionInstructions,
    subqs: SubQuestionSet,
    state: SubAnswerState,
    history: Vec<SubAnswerState>,
    change_captions: VecDeque<ClipCaption>,
    events: Vec<TelemetryEvent>,
    sink: Option<Box<dyn Write + Send + 'a>>,
    calls: usize,
    reflections: usize,
    last_clip: Option<(usize, f64)>,
    outcome: Option<(TimingResult, usize)>,
}

impl<'a, R: Reasoner + ?Sized> Controller<'a, R> {
    /// Runs caption instructions and question decomposition at query time.
    pub fn open(
        episode: &QueryEpisode,
        backend: &'a R,
        cfg: AtdmConfig,
        sink: Option<Box<dyn Write + Send + 'a>>,
    ) -> Result<Self, AtdmError> {
        cfg.validate()?;
        let p1 = tried(backend, "caption instructions", |b| part1_instructions(&episode.query, b, &cfg));
        let instructions = p1.outcome?;
        let p2 = tried(backend, "question decomposition", |b| part2_decompose(&episode.query, b, &cfg));
        let subqs = p2.outcome?;
        let state = SubAnswerState::initial(&subqs);
        let mut c = Self {
            backend,
            cfg,
            episode: episode.clone(),
            instructions,
            subqs,
            state,
            history: Vec::new(),
            change_captions: VecDeque::new(),
            events: Vec::new(),
            sink,
            calls: p1.calls + p2.calls,
            reflections: 0,
            last_clip: None,
            outcome: None,
        };
        let t = episode.t_q;
        c.emit(t, EventKind::Part1, None, json!({"requirements": c.instructions.requirements}))?;
        c.emit(t, EventKind::Part2, None, json!({"subquestions": c.subqs.items}))?;
        Ok(c)
    }

    pub fn instructions(&self) -> &CaptionInstructions {
        &self.instructions
    }

    pub fn subquestions(&self) -> &SubQuestionSet {
        &self.subqs
    }

    pub fn state(&self) -> &SubAnswerState {
        &self.state
    }

    pub fn is_finished(&self) -> bool {
        self.outcome.is_some()
    }

    fn emit(&mut self, t: f64, event: EventKind, clip: Option<usize>, payload: Value) -> Result<(), AtdmError> {
        let e = TelemetryEvent {
            t,
            event,
            clip,
            rho: self.state.rho,
            confidences: self.state.confidences(),
            payload,
        };
        if let Some(w) = self.sink.as_mut() {
            serde_json::to_writer(&mut *w, &e).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        self.events.push(e);
        Ok(())
    }

    /// Captions, updates and possibly answers for the next clip. Returns
    /// whether the episode is now answered.
    pub fn step(&mut self, clip: &Clip) -> Result<bool, AtdmError> {
        let job = caption_job(clip, &self.instructions, self.backend, &self.cfg);
        self.apply(clip, job)
    }

    fn apply(&mut self, clip: &Clip, caption: Tried<ClipCaption>) -> Result<bool, AtdmError> {
        if self.outcome.is_some() {
            return Err(AtdmError::Finished);
        }
        if let Some((last, _)) = self.last_clip {
            if clip.index <= last {
                return Err(AtdmError::Config(format!("clip {} after clip {last}", clip.index)));
            }
        }
        self.last_clip = Some((clip.index, clip.t_end));
        self.calls += caption.calls;
        let t = clip.t_end.max(self.episode.t_q);
        let i = Some(clip.index);

        let caption = match caption.outcome {
            Ok(c) => {
                self.emit(t, EventKind::Caption, i, json!({"timestamp": c.clip_timestamp, "caption": c.caption}))?;
                c
            }
            Err(e) if e.is_reply_error() => {
                self.emit(t, EventKind::Caption, i, json!({"noop": true, "error": e.to_string()}))?;
                self.emit(t, EventKind::Wait, i, json!({}))?;
                return Ok(false);
            }
            Err(e) => return Err(e),
        };

        let (query, subqs, cfg) = (&self.episode.query, &self.subqs, &self.cfg);
        let prior = &self.state;
        let upd = tried(self.backend, &format!("update for clip {}", clip.index), |b| {
            part4_update(query, subqs, prior, &caption, clip.index, b, cfg)
        });
        self.calls += upd.calls;
        let (next, noop) = match upd.outcome {
            Ok(s) => (s, None),
            Err(e) if e.is_reply_error() => (self.state.clone(), Some(e.to_string())),
            Err(e) => return Err(e),
        };
        let changed = next.answers != self.state.answers;
        self.state = next;
        self.history.push(self.state.clone());
        if changed {
            self.change_captions.push_back(caption.clone());
            while self.change_captions.len() > self.cfg.history_cap {
                self.change_captions.pop_front();
            }
        }
        let payload = match noop {
            Some(err) => json!({"noop": true, "error": err}),
            None => json!({"answers": self.state.answers, "reported_progress": self.state.reported_progress}),
        };
        self.emit(t, EventKind::Update, i, payload)?;

        if !self.cfg.binary_gate && reflection_trigger(&self.history, &self.cfg) {
            self.reflect(t, clip.index, &caption)?;
        }

        if self.state.rho >= 1.0 {
            let (episode, state, cfg) = (&self.episode, &self.state, &self.cfg);
            let fin = tried(self.backend, "final answer", |b| compose_answer(episode, state, clip.index, b, cfg));
            self.calls += fin.calls;
            let answer = match fin.outcome {
                Ok(a) => a,
                Err(e) if e.is_reply_error() => {
                    log::warn!("final answer unusable ({e}); falling back to sub-answers");
                    self.state
                        .answers
                        .iter()
                        .map(|a| a.value.as_str())
                        .collect::<Vec<_>>()
                        .join("; ")
                }
                Err(e) => return Err(e),
            };
            self.emit(t, EventKind::Answer, i, json!({"answer": answer}))?;
            self.outcome = Some((TimingResult::answered(t, self.episode.t_star, answer), clip.index));
            return Ok(true);
        }
        self.emit(t, EventKind::Wait, i, json!({}))?;
        Ok(false)
    }

    fn reflect(&mut self, t: f64, clip: usize, current: &ClipCaption) -> Result<(), AtdmError> {
        let mut captions: Vec<ClipCaption> = self.change_captions.iter().cloned().collect();
        if captions.last() != Some(current) {
            captions.push(current.clone());
        }
        let (query, subqs, state, cfg) = (&self.episode.query, &self.subqs, &self.state, &self.cfg);
        let r = tried(self.backend, &format!("reflection at clip {clip}"), |b| {
            part5_reflect(query, subqs, state, &captions, clip, b, cfg)
        });
        self.calls += r.calls;
        self.reflections += 1;
        let payload = match r.outcome {
            Ok((report, merged)) => {
                self.state = merged;
                *self.history.last_mut().expect("history has the current state") = self.state.clone();
                json!({
                    "causal_chain": report.causal_chain,
                    "attribute_status": report.attribute_status,
                    "reported_progress": report.estimated_progress,
                })
            }
            Err(e) if e.is_reply_error() => json!({"noop": true, "error": e.to_string()}),
            Err(e) => return Err(e),
        };
        self.emit(t, EventKind::Reflect, Some(clip), payload)
    }

    /// Closes the episode; an unanswered episode is marked unresolved.
    pub fn finish(mut self) -> Result<DecisionTrace, AtdmError> {
        let (status, timing, answer_clip) = match self.outcome.take() {
            Some((timing, clip)) => (TraceStatus::Answered, timing, Some(clip)),
            None => {
                let (clip, t) = match self.last_clip {
                    Some((c, t)) => (Some(c), t.max(self.episode.t_q)),
                    None => (None, self.episode.t_q),
                };
                self.emit(t, EventKind::Unresolved, clip, json!({}))?;
                (TraceStatus::StreamEnded, TimingResult::unresolved(), None)
            }
        };
        Ok(DecisionTrace {
            status,
            timing,
            answer_clip,
            backend_calls: self.calls,
            reflections: self.reflections,
            events: self.events,
        })
    }
}

/// Runs one episode over the whole stream.
///
/// Captions for up to `cfg.w_par` upcoming clips are requested concurrently;
/// updates are applied strictly in clip order, and captions fetched past the
/// answering clip are discarded, so the trace does not depend on `w_par`.
pub fn run_episode<R: Reasoner + ?Sized>(
    stream: &ClipStream,
    episode: &QueryEpisode,
    backend: &R,
    cfg: AtdmConfig,
    sink: Option<Box<dyn Write + Send + '_>>,
) -> Result<DecisionTrace, AtdmError> {
    cfg.validate()?;
    let mut ctrl = Controller::open(episode, backend, cfg, sink)?;
    let instructions = ctrl.instructions.clone();
    let clips = stream.clips();
    std::thread::scope(|s| -> Result<(), AtdmError> {
        let mut pending = VecDeque::new();
        let mut next = 0;
        loop {
            while pending.len() < cfg.w_par && next < clips.len() {
                let clip = &clips[next];
                let instructions = &instructions;
                let cfg = &cfg;
                pending.push_back((clip, s.spawn(move || caption_job(clip, instructions, backend, cfg))));
                next += 1;
            }
            let Some((clip, handle)) = pending.pop_front() else {
                return Ok(());
            };
            let job = handle.join().expect("caption worker panicked");
            if ctrl.apply(clip, job)? {
                return Ok(());
            }
        }
    })?;
    ctrl.finish()
}
