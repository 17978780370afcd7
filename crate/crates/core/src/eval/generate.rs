//! Deterministic synthetic episodes: a caption-mode stream, the query, and a
//! scripted oracle that reveals sub-answers on a fixed schedule.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::atdm::{clip_timestamp, SubQuestion, SubQuestionType, UNKNOWN};
use crate::backend::{Script, TemplateId};
use crate::stream::{Clip, ClipContent, ClipStream, FrameTokens, QueryEpisode};

use super::EvalError;

const SUBJECTS: &[&str] = &[
    "red car", "white van", "cyclist", "brown dog", "street vendor", "city bus", "oak tree", "traffic light",
    "blue umbrella", "delivery truck", "crossing guard", "food stall", "parked scooter", "shop sign",
    "fire hydrant", "jogger",
];
const COLORS: &[&str] = &["red", "green", "blue", "yellow", "black", "white"];
const ACTIONS: &[&str] = &["turning left", "standing still", "crossing the street", "speeding up", "waving"];
const PLACES: &[&str] = &["left of", "right of", "behind", "in front of"];
const SCENES: &[&str] = &["a rainy avenue", "a market square", "a quiet side street", "a busy junction"];
const FILLER: &[&str] = &[
    "Rain streaks across the lens.",
    "Pedestrians pass along the sidewalk.",
    "Traffic moves steadily in both lanes.",
    "The camera pans slowly to the right.",
    "Shop fronts line the far side of the road.",
    "A horn sounds in the distance.",
];

/// When and how confidently one sub-question is answered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reveal {
    pub clip: usize,
    pub value: String,
    pub confidence: f64,
}

/// A scripted confidence drop: the sub-question first appears at 0.8 on
/// `clip`, falls to 0.4 on the next clip, and reflection restores it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropSpec {
    pub subquestion: usize,
    pub clip: usize,
}

pub const DROP_FROM: f64 = 0.8;
pub const DROP_TO: f64 = 0.4;
pub const RESTORED: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEpisodeSpec {
    pub n_clips: usize,
    pub clip_seconds: f64,
    pub query: String,
    pub options: Vec<String>,
    pub answer: String,
    pub requirements: Vec<String>,
    pub subquestions: Vec<SubQuestion>,
    /// Per sub-question; `None` leaves it unanswered for the whole stream.
    pub reveals: Vec<Option<Reveal>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop: Option<DropSpec>,
    /// Clip at whose start the query arrives.
    pub query_clip: usize,
    /// Clip-independent sentences mixed into each caption.
    pub filler: Vec<String>,
}

/// Output of [`SyntheticEpisodeSpec::build`].
#[derive(Debug, Clone)]
pub struct GeneratedEpisode {
    pub stream: ClipStream,
    pub episode: QueryEpisode,
    pub script: Script,
}

impl SyntheticEpisodeSpec {
    pub fn resolvable(&self) -> bool {
        self.reveals.iter().all(Option::is_some)
    }

    /// Clip at which every sub-question first reaches the answer threshold.
    pub fn completion_clip(&self) -> Option<usize> {
        if !self.resolvable() {
            return None;
        }
        let mut last = self.reveals.iter().flatten().map(|r| r.clip).max()?;
        if let Some(d) = &self.drop {
            last = last.max(d.clip + 1);
        }
        Some(last)
    }

    fn t_end(&self, clip: usize) -> f64 {
        clip as f64 * self.clip_seconds
    }

    pub fn t_star(&self) -> f64 {
        self.t_end(self.completion_clip().unwrap_or(self.n_clips))
    }

    pub fn t_q(&self) -> f64 {
        self.t_end(self.query_clip - 1)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::Dataset(m));
        if self.n_clips == 0 || self.clip_seconds <= 0.0 {
            return bad("episode needs at least one clip of positive length".into());
        }
        if self.reveals.len() != self.subquestions.len() || self.subquestions.is_empty() {
            return bad("one reveal slot per sub-question is required".into());
        }
        if self
            .reveals
            .iter()
            .flatten()
            .any(|r| r.clip == 0 || r.clip > self.n_clips || r.confidence < 0.85)
        {
            return bad("reveals must be within the stream and above the answer threshold".into());
        }
        if let Some(d) = &self.drop {
            let Some(Some(r)) = self.reveals.get(d.subquestion) else {
                return bad("dropped sub-question must be revealed".into());
            };
            if d.clip == 0 || d.clip + 1 > self.n_clips || r.clip != d.clip + 1 {
                return bad("a dropped sub-question resolves on the clip after the drop".into());
            }
        }
        let first = self.reveals.iter().flatten().map(|r| r.clip).min().unwrap_or(1);
        if self.query_clip == 0 || self.query_clip > first.min(self.n_clips) {
            return bad("query must arrive no later than the first reveal".into());
        }
        Ok(())
    }

    /// `(value, confidence)` the oracle reports for sub-question `s` after clip `c`.
    fn answer_at(&self, s: usize, c: usize) -> (String, f64) {
        if let (Some(d), Some(r)) = (&self.drop, &self.reveals[s]) {
            if d.subquestion == s {
                return match c {
                    _ if c < d.clip => (UNKNOWN.into(), 0.0),
                    _ if c == d.clip => (r.value.clone(), DROP_FROM),
                    _ if c == d.clip + 1 => (r.value.clone(), DROP_TO),
                    _ => (r.value.clone(), RESTORED),
                };
            }
        }
        match &self.reveals[s] {
            Some(r) if r.clip <= c => (r.value.clone(), r.confidence),
            _ => (UNKNOWN.into(), 0.0),
        }
    }

    fn caption(&self, c: usize) -> String {
        let mut parts = vec![format!("Clip {c} shows the street from a fixed camera.")];
        for (s, q) in self.subquestions.iter().enumerate() {
            let newly = match (&self.drop, &self.reveals[s]) {
                (Some(d), Some(_)) if d.subquestion == s => c == d.clip,
                (_, Some(r)) => r.clip == c,
                _ => false,
            };
            if newly {
                let (value, _) = self.answer_at(s, c);
                parts.push(format!("Regarding \"{}\": {value}.", q.question));
            }
        }
        parts.push(self.filler[(c - 1) % self.filler.len()].clone());
        parts.join(" ")
    }

    fn status(&self, c: usize) -> Value {
        let items: Vec<Value> = self
            .subquestions
            .iter()
            .enumerate()
            .map(|(s, q)| {
                let (value, confidence) = self.answer_at(s, c);
                json!({"type": q.kind, "question": q.question, "value": value, "confidence": confidence})
            })
            .collect();
        let hit = (0..self.subquestions.len())
            .filter(|&s| self.answer_at(s, c).1 >= 0.85)
            .count();
        json!({
            "subquestion_status": items,
            "estimated_progress": (100 * hit) / self.subquestions.len(),
        })
    }

    fn reflection(&self, d: &DropSpec) -> Value {
        let c = d.clip + 1;
        let mut status = serde_json::Map::new();
        let mut chain = Vec::new();
        for (s, q) in self.subquestions.iter().enumerate() {
            let (value, conf) = self.answer_at(s, c);
            if s == d.subquestion {
                let evidence = format!("Regarding \"{}\": {value}.", q.question);
                chain.push(format!("Clip {} -> [supports] [{}] because {evidence}", d.clip, q.question));
                status.insert(
                    q.question.clone(),
                    json!({
                        "value": value,
                        "confidence": RESTORED,
                        "status": "upgraded",
                        "note": format!("old {DROP_TO:.2} -> new {RESTORED:.2}, [{evidence}]"),
                    }),
                );
            } else {
                status.insert(
                    q.question.clone(),
                    json!({"value": value, "confidence": conf, "status": "unchanged", "note": "unchanged - no evidence"}),
                );
            }
        }
        chain.push(format!("Clip {c} -> No relevant evidence for current attributes"));
        let hit = (0..self.subquestions.len())
            .filter(|&s| s == d.subquestion || self.answer_at(s, c).1 >= 0.85)
            .count();
        json!({
            "causal_chain": chain,
            "attribute_status": status,
            "estimated_progress": (100 * hit) / self.subquestions.len(),
        })
    }

    /// Materialises the stream, the episode record and the oracle script.
    pub fn build(&self) -> Result<GeneratedEpisode, EvalError> {
        self.validate()?;
        let clips: Vec<Clip> = (1..=self.n_clips)
            .map(|c| Clip {
                index: c,
                t_start: self.t_end(c - 1),
                t_end: self.t_end(c),
                frame_count: 1,
                content: ClipContent::Caption(self.caption(c)),
            })
            .collect();
        let stream = ClipStream::new(clips)?;
        let episode = QueryEpisode {
            query: self.query.clone(),
            t_q: self.t_q(),
            t_star: self.t_star(),
            answer_gt: self.answer.clone(),
            options: Some(self.options.clone()),
        };

        let mut script = Script::default();
        script.push(TemplateId::Part1, None, json!({ "caption_requirements": self.requirements }));
        let subqs: Vec<Value> = self
            .subquestions
            .iter()
            .map(|q| json!({"type": q.kind, "question": q.question}))
            .collect();
        script.push(TemplateId::Part2, None, json!({ "required_subquestions": subqs }));
        // every clip gets a caption so that look-ahead requests never run dry
        for clip in stream.clips() {
            let caption = clip.caption().expect("caption stream");
            script.push(
                TemplateId::Part3,
                Some(clip.index),
                json!({"clip_timestamp": clip_timestamp(clip.t_start, clip.t_end), "caption": caption}),
            );
        }
        let last = self.completion_clip().unwrap_or(self.n_clips);
        for c in 1..=last {
            script.push(TemplateId::Part4, Some(c), self.status(c));
        }
        if let Some(d) = &self.drop {
            script.push(TemplateId::Part5, Some(d.clip + 1), self.reflection(d));
        }
        // ablations may answer earlier than the schedule, so every clip gets one
        if self.resolvable() {
            for c in 1..=self.n_clips {
                script.push(TemplateId::Final, Some(c), json!({ "answer": self.answer }));
            }
        }
        Ok(GeneratedEpisode {
            stream,
            episode,
            script,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<GeneratedEpisode, EvalError> {
        let g = self.build()?;
        fs::create_dir_all(dir)?;
        g.stream.save(&dir.join("stream.jsonl"))?;
        write_json(&dir.join("episode.json"), &g.episode)?;
        write_json(&dir.join("script.json"), &g.script)?;
        Ok(g)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), EvalError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn question_for(kind: SubQuestionType, subject: &str, other: &str, rng: &mut ChaCha8Rng) -> (String, String) {
    match kind {
        SubQuestionType::Object => (format!("Is there a {subject} visible?"), "yes".into()),
        SubQuestionType::Attribute => (
            format!("What color is the {subject}?"),
            COLORS.choose(rng).expect("non-empty").to_string(),
        ),
        SubQuestionType::Person => (format!("Who is standing next to the {subject}?"), "a man in a grey coat".into()),
        SubQuestionType::Action => (
            format!("What is the {subject} doing?"),
            ACTIONS.choose(rng).expect("non-empty").to_string(),
        ),
        SubQuestionType::Scene => (
            format!("Where is the {subject} located?"),
            SCENES.choose(rng).expect("non-empty").to_string(),
        ),
        SubQuestionType::Event => (format!("What happens to the {subject}?"), "it stops at the curb".into()),
        SubQuestionType::TemporalChange => (
            format!("Does the {subject} change position over time?"),
            "it moves forward".into(),
        ),
        SubQuestionType::SpatialRelation => (
            format!("Where is the {subject} relative to the {other}?"),
            PLACES.choose(rng).expect("non-empty").to_string(),
        ),
        SubQuestionType::CausalRelation => (
            format!("Why does the {subject} stop?"),
            format!("because of the {other}"),
        ),
        SubQuestionType::Count => (format!("How many {subject}s appear?"), rng.random_range(1..=5).to_string()),
        SubQuestionType::Other => (format!("Is anything unusual about the {subject}?"), "no".into()),
    }
}

/// Knobs for [`generate_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetOptions {
    pub seed: u64,
    pub count: usize,
    /// Episodes (counted from the end) that leave one sub-question unanswered.
    pub unresolvable: usize,
    /// Episodes (counted from the start) with a scripted confidence drop.
    pub drops: usize,
    pub min_clips: usize,
    pub max_clips: usize,
    /// Spread of revealed confidences above the threshold, in `[0, 0.14]`.
    pub jitter: f64,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            seed: 7,
            count: 10,
            unresolvable: 0,
            drops: 0,
            min_clips: 3,
            max_clips: 6,
            jitter: 0.1,
        }
    }
}

/// Draws one episode spec.
pub fn random_spec(rng: &mut ChaCha8Rng, unresolvable: bool, with_drop: bool, opts: &DatasetOptions) -> SyntheticEpisodeSpec {
    let min_clips = opts.min_clips.max(if with_drop { 2 } else { 1 });
    let n_clips = rng.random_range(min_clips..=opts.max_clips.max(min_clips));
    let clip_seconds = *[1.0, 2.0, 4.0].choose(rng).expect("non-empty");
    let k = rng.random_range(2..=4usize);
    let mut subjects: Vec<&str> = SUBJECTS.to_vec();
    subjects.shuffle(rng);
    let mut subquestions = Vec::with_capacity(k);
    let mut reveals = Vec::with_capacity(k);
    for s in 0..k {
        let kind = *SubQuestionType::ALL.choose(rng).expect("non-empty");
        let (question, value) = question_for(kind, subjects[s], subjects[k + s], rng);
        subquestions.push(SubQuestion { kind, question });
        let jitter = opts.jitter.clamp(0.0, 0.14);
        let confidence = ((0.86 + rng.random::<f64>() * jitter) * 100.0).round() / 100.0;
        reveals.push(Some(Reveal {
            clip: rng.random_range(1..=n_clips),
            value,
            confidence,
        }));
    }
    let drop = with_drop.then(|| {
        let s = rng.random_range(0..k);
        let clip = rng.random_range(1..n_clips);
        // the dropped sub-question resolves through reflection on the next clip
        if let Some(r) = reveals[s].as_mut() {
            r.clip = clip + 1;
        }
        DropSpec { subquestion: s, clip }
    });
    if unresolvable {
        let s = (0..k).find(|&s| drop.as_ref().is_none_or(|d| d.subquestion != s)).unwrap_or(0);
        reveals[s] = None;
    }
    let first = reveals.iter().flatten().map(|r| r.clip).min().unwrap_or(1);
    let first = match &drop {
        Some(d) => first.min(d.clip),
        None => first,
    };
    let query_clip = rng.random_range(1..=first);
    let answer_idx = rng.random_range(0..4usize);
    let options: Vec<String> = (0..4)
        .map(|i| {
            let letter = (b'A' + i as u8) as char;
            format!("{letter}. The {} is {}", subjects[i], ACTIONS[(i + answer_idx) % ACTIONS.len()])
        })
        .collect();
    let mut filler: Vec<String> = FILLER.iter().map(|s| s.to_string()).collect();
    filler.shuffle(rng);
    SyntheticEpisodeSpec {
        n_clips,
        clip_seconds,
        query: format!("What is the {} doing right now?", subjects[answer_idx]),
        answer: options[answer_idx].clone(),
        options,
        requirements: vec![
            format!("exact position of the {}", subjects[0]),
            format!("actions of the {} in order", subjects[answer_idx]),
        ],
        subquestions,
        reveals,
        drop,
        query_clip,
        filler,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub resolvable: bool,
    pub has_drop: bool,
    pub completion_clip: Option<usize>,
    pub t_star: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub options: DatasetOptions,
    pub episodes: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(dir.join("manifest.json"))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Writes `opts.count` episodes under `dir`, one sub-directory each, plus `manifest.json`.
pub fn generate_dataset(dir: &Path, opts: &DatasetOptions) -> Result<Manifest, EvalError> {
    if opts.count == 0 {
        return Err(EvalError::Dataset("count must be at least 1".into()));
    }
    if opts.min_clips == 0 || opts.min_clips > opts.max_clips {
        return Err(EvalError::Dataset("need 1 <= min_clips <= max_clips".into()));
    }
    if opts.drops > 0 && opts.max_clips < 2 {
        return Err(EvalError::Dataset("a drop needs streams of at least 2 clips".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut episodes = Vec::with_capacity(opts.count);
    for i in 0..opts.count {
        let spec = random_spec(&mut rng, i + opts.unresolvable >= opts.count, i < opts.drops, opts);
        let id = format!("ep_{i:03}");
        spec.write(&dir.join(&id))?;
        write_json(&dir.join(&id).join("spec.json"), &spec)?;
        episodes.push(ManifestEntry {
            id,
            resolvable: spec.resolvable(),
            has_drop: spec.drop.is_some(),
            completion_clip: spec.completion_clip(),
            t_star: spec.t_star(),
        });
    }
    let manifest = Manifest {
        options: opts.clone(),
        episodes,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Feature-mode stream of seeded Gaussian frame tokens.
pub fn generate_feature_stream(
    seed: u64,
    n_clips: usize,
    frames: usize,
    tokens_per_frame: usize,
    d: usize,
    clip_seconds: f64,
) -> Result<ClipStream, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clips = (1..=n_clips)
        .map(|c| Clip {
            index: c,
            t_start: (c - 1) as f64 * clip_seconds,
            t_end: c as f64 * clip_seconds,
            frame_count: frames,
            content: ClipContent::Frames(
                (0..frames)
                    .map(|_| {
                        FrameTokens(Array2::from_shape_simple_fn((tokens_per_frame, d), || {
                            let x: f64 = StandardNormal.sample(&mut rng);
                            (x * 1e6).round() / 1e6
                        }))
                    })
                    .collect(),
            ),
        })
        .collect();
    Ok(ClipStream::new(clips)?)
}
