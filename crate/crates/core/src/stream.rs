//! Streaming timeline: clips, query episodes and timing metrics.
//!
//! A stream is a contiguous sequence of half-open clips `[t_start, t_end)`.
//! Clips carry either pre-tokenized frame features or a ground-truth caption,
//! never both, and a stream never mixes the two.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("clip {index}: t_start {t_start} does not continue previous t_end {prev_end}")]
    Contiguity {
        index: usize,
        prev_end: f64,
        t_start: f64,
    },
    #[error("line {line}: clip is in {found} mode but stream is in {expected} mode")]
    Mode {
        line: usize,
        expected: IngestMode,
        found: IngestMode,
    },
    #[error("time {0} is outside the stream")]
    OutOfRange(f64),
    #[error("stream has no clips")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IngestMode {
    Feature,
    Caption,
}

impl fmt::Display for IngestMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IngestMode::Feature => f.write_str("feature"),
            IngestMode::Caption => f.write_str("caption"),
        }
    }
}

/// Token matrix of one frame, shape `(tokens_per_frame, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTokens(pub Array2<f64>);

impl FrameTokens {
    pub fn tokens_per_frame(&self) -> usize {
        self.0.nrows()
    }

    pub fn width(&self) -> usize {
        self.0.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClipContent {
    Frames(Vec<FrameTokens>),
    Caption(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub index: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub frame_count: usize,
    pub content: ClipContent,
}

impl Clip {
    pub fn mode(&self) -> IngestMode {
        match self.content {
            ClipContent::Frames(_) => IngestMode::Feature,
            ClipContent::Caption(_) => IngestMode::Caption,
        }
    }

    pub fn caption(&self) -> Option<&str> {
        match &self.content {
            ClipContent::Caption(c) => Some(c),
            ClipContent::Frames(_) => None,
        }
    }

    pub fn frames(&self) -> Option<&[FrameTokens]> {
        match &self.content {
            ClipContent::Frames(f) => Some(f),
            ClipContent::Caption(_) => None,
        }
    }

    /// All frame tokens stacked row-wise, `(frame_count * tokens_per_frame, d)`.
    pub fn visual_tokens(&self) -> Option<Array2<f64>> {
        let frames = self.frames()?;
        let tpf = frames[0].tokens_per_frame();
        let d = frames[0].width();
        let mut out = Array2::zeros((frames.len() * tpf, d));
        for (f, frame) in frames.iter().enumerate() {
            out.slice_mut(ndarray::s![f * tpf..(f + 1) * tpf, ..])
                .assign(&frame.0);
        }
        Some(out)
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

/// Wire form of one JSONL line.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipRecord {
    pub index: usize,
    pub t_start: f64,
    pub t_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption_gt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<Vec<Vec<Vec<f64>>>>,
}

impl From<&Clip> for ClipRecord {
    fn from(clip: &Clip) -> Self {
        match &clip.content {
            ClipContent::Caption(c) => ClipRecord {
                index: clip.index,
                t_start: clip.t_start,
                t_end: clip.t_end,
                frame_count: (clip.frame_count != 1).then_some(clip.frame_count),
                caption_gt: Some(c.clone()),
                frames: None,
            },
            ClipContent::Frames(frames) => ClipRecord {
                index: clip.index,
                t_start: clip.t_start,
                t_end: clip.t_end,
                frame_count: None,
                caption_gt: None,
                frames: Some(
                    frames
                        .iter()
                        .map(|f| f.0.rows().into_iter().map(|r| r.to_vec()).collect())
                        .collect(),
                ),
            },
        }
    }
}

fn clip_from_record(rec: ClipRecord, line: usize) -> Result<Clip, StreamError> {
    let bad = |message: String| StreamError::Parse { line, message };
    if !(rec.t_start.is_finite() && rec.t_end.is_finite()) || rec.t_start < 0.0 {
        return Err(bad("clip times must be finite and non-negative".into()));
    }
    if rec.t_start >= rec.t_end {
        return Err(bad(format!(
            "t_start {} must precede t_end {}",
            rec.t_start, rec.t_end
        )));
    }
    let content = match (rec.caption_gt, rec.frames) {
        (Some(_), Some(_)) => return Err(bad("clip has both caption_gt and frames".into())),
        (None, None) => return Err(bad("clip has neither caption_gt nor frames".into())),
        (Some(c), None) => ClipContent::Caption(c),
        (None, Some(raw)) => {
            if raw.is_empty() {
                return Err(bad("feature clip has no frames".into()));
            }
            let tpf = raw[0].len();
            if tpf == 0 {
                return Err(bad("frame has no tokens".into()));
            }
            let d = raw[0][0].len();
            if d == 0 {
                return Err(bad("token has zero width".into()));
            }
            let mut frames = Vec::with_capacity(raw.len());
            for (fi, frame) in raw.into_iter().enumerate() {
                if frame.len() != tpf {
                    return Err(bad(format!(
                        "frame {fi} has {} tokens, expected {tpf}",
                        frame.len()
                    )));
                }
                let mut flat = Vec::with_capacity(tpf * d);
                for tok in frame {
                    if tok.len() != d {
                        return Err(bad(format!("frame {fi} has a token of width {}", tok.len())));
                    }
                    if tok.iter().any(|x| !x.is_finite()) {
                        return Err(bad(format!("frame {fi} has a non-finite value")));
                    }
                    flat.extend(tok);
                }
                frames.push(FrameTokens(
                    Array2::from_shape_vec((tpf, d), flat).expect("shape checked"),
                ));
            }
            ClipContent::Frames(frames)
        }
    };
    let frame_count = match &content {
        ClipContent::Frames(f) => {
            if let Some(fc) = rec.frame_count {
                if fc != f.len() {
                    return Err(bad(format!(
                        "frame_count {fc} does not match {} frames",
                        f.len()
                    )));
                }
            }
            f.len()
        }
        ClipContent::Caption(_) => rec.frame_count.unwrap_or(1),
    };
    if frame_count == 0 {
        return Err(bad("frame_count must be at least 1".into()));
    }
    Ok(Clip {
        index: rec.index,
        t_start: rec.t_start,
        t_end: rec.t_end,
        frame_count,
        content,
    })
}

/// An ordered, contiguous, single-mode clip sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipStream {
    mode: IngestMode,
    clips: Vec<Clip>,
}

impl ClipStream {
    /// Validates ordering, contiguity, a single mode and consistent frame shapes.
    pub fn new(clips: Vec<Clip>) -> Result<Self, StreamError> {
        let first = clips.first().ok_or(StreamError::Empty)?;
        let mode = first.mode();
        let shape = first.frames().map(|f| (f[0].tokens_per_frame(), f[0].width()));
        for (i, clip) in clips.iter().enumerate() {
            let line = i + 1;
            if clip.mode() != mode {
                return Err(StreamError::Mode {
                    line,
                    expected: mode,
                    found: clip.mode(),
                });
            }
            if clip.index != i + 1 {
                return Err(StreamError::Parse {
                    line,
                    message: format!("clip index {} out of order, expected {}", clip.index, i + 1),
                });
            }
            if let (Some(frames), Some((tpf, d))) = (clip.frames(), shape) {
                if frames
                    .iter()
                    .any(|f| f.tokens_per_frame() != tpf || f.width() != d)
                {
                    return Err(StreamError::Parse {
                        line,
                        message: format!("frame shape differs from the stream's ({tpf} x {d})"),
                    });
                }
            }
            if i > 0 {
                let prev_end = clips[i - 1].t_end;
                if clip.t_start != prev_end {
                    return Err(StreamError::Contiguity {
                        index: clip.index,
                        prev_end,
                        t_start: clip.t_start,
                    });
                }
            }
        }
        Ok(Self { mode, clips })
    }

    pub fn from_jsonl(text: &str, mode: IngestMode) -> Result<Self, StreamError> {
        let mut clips = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let rec: ClipRecord = serde_json::from_str(raw).map_err(|e| StreamError::Parse {
                line,
                message: e.to_string(),
            })?;
            let clip = clip_from_record(rec, line)?;
            if clip.mode() != mode {
                return Err(StreamError::Mode {
                    line,
                    expected: mode,
                    found: clip.mode(),
                });
            }
            clips.push(clip);
        }
        Self::new(clips)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for clip in &self.clips {
            out.push_str(&serde_json::to_string(&ClipRecord::from(clip)).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), StreamError> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    pub fn mode(&self) -> IngestMode {
        self.mode
    }

    pub fn clips(&self) -> &[Clip] {
        &self.clips
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    /// Clip by 1-based index.
    pub fn clip(&self, index: usize) -> Option<&Clip> {
        index.checked_sub(1).and_then(|i| self.clips.get(i))
    }

    pub fn start_time(&self) -> f64 {
        self.clips[0].t_start
    }

    pub fn end_time(&self) -> f64 {
        self.clips[self.clips.len() - 1].t_end
    }

    /// `(tokens_per_frame, d)` for feature streams.
    pub fn frame_shape(&self) -> Option<(usize, usize)> {
        self.clips[0]
            .frames()
            .map(|f| (f[0].tokens_per_frame(), f[0].width()))
    }

    /// 1-based index of the clip whose `[t_start, t_end)` contains `t`.
    pub fn clip_at(&self, t: f64) -> Result<usize, StreamError> {
        if !t.is_finite() || t < self.start_time() || t >= self.end_time() {
            return Err(StreamError::OutOfRange(t));
        }
        // First clip whose end lies strictly after t.
        let pos = self.clips.partition_point(|c| c.t_end <= t);
        Ok(self.clips[pos].index)
    }
}

pub fn load_stream(path: &Path, mode: IngestMode) -> Result<ClipStream, StreamError> {
    let text = fs::read_to_string(path)?;
    ClipStream::from_jsonl(&text, mode)
}

/// A question asked against the stream, with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEpisode {
    pub query: String,
    pub t_q: f64,
    /// First time at which the evidence suffices to answer.
    pub t_star: f64,
    pub answer_gt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
}

impl QueryEpisode {
    pub fn validate(&self) -> Result<(), StreamError> {
        let bad = |message: &str| StreamError::Parse {
            line: 1,
            message: message.to_string(),
        };
        if self.query.trim().is_empty() {
            return Err(bad("query is empty"));
        }
        if !(self.t_q.is_finite() && self.t_q >= 0.0) {
            return Err(bad("t_q must be finite and non-negative"));
        }
        if !(self.t_star.is_finite() && self.t_star >= 0.0) {
            return Err(bad("t_star must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, StreamError> {
        let text = fs::read_to_string(path)?;
        let ep: QueryEpisode = serde_json::from_str(&text).map_err(|e| StreamError::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        ep.validate()?;
        Ok(ep)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingResult {
    pub answered: bool,
    pub t_r: Option<f64>,
    pub delta: Option<f64>,
    pub answer_text: Option<String>,
}

impl TimingResult {
    pub fn answered(t_r: f64, t_star: f64, answer_text: String) -> Self {
        Self {
            answered: true,
            t_r: Some(t_r),
            delta: Some(timing_delta(t_r, t_star)),
            answer_text: Some(answer_text),
        }
    }

    pub fn unresolved() -> Self {
        Self {
            answered: false,
            t_r: None,
            delta: None,
            answer_text: None,
        }
    }
}

/// Deviation between response time and first-sufficient-evidence time.
pub fn timing_delta(t_r: f64, t_star: f64) -> f64 {
    (t_r - t_star).abs()
}
