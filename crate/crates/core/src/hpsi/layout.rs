use std::ops::Range;

use serde::Serialize;

use super::{AggregationSchedule, HpsiError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmentKind {
    TextPre,
    /// Raw visual tokens of a clip (0-based clip position).
    Visual { clip: usize },
    /// Aggregation tokens of a clip at level 1..=3.
    Agg { clip: usize, level: usize },
    TextPost,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub kind: SegmentKind,
    pub offset: usize,
    pub len: usize,
}

impl Segment {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Token spans belonging to one clip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipSpan {
    pub visual: Range<usize>,
    pub first_frame: Range<usize>,
    /// One range per materialised level, level 1 first.
    pub agg: Vec<Range<usize>>,
}

impl ClipSpan {
    /// Range of level `j` (1-based).
    pub fn level(&self, j: usize) -> &Range<usize> {
        &self.agg[j - 1]
    }

    pub fn visual_len(&self) -> usize {
        self.visual.len()
    }
}

/// Interleaved layout: text, then per clip (visual, level 1, level 2, level 3), then text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceLayout {
    pub segments: Vec<Segment>,
    pub text_pre: Range<usize>,
    pub text_post: Range<usize>,
    pub clips: Vec<ClipSpan>,
    pub levels: usize,
    pub tokens_per_frame: usize,
}

impl SequenceLayout {
    pub fn len(&self) -> usize {
        self.text_post.end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_clips(&self) -> usize {
        self.clips.len()
    }

    /// Segment containing position `pos`.
    pub fn segment_at(&self, pos: usize) -> Option<&Segment> {
        let idx = self.segments.partition_point(|s| s.offset + s.len <= pos);
        self.segments.get(idx).filter(|s| s.range().contains(&pos))
    }
}

/// Lays out `text_pre`, each clip's visual and aggregation tokens, then `text_post`.
///
/// `clip_tokens[i]` is the number of raw visual tokens of clip `i`.
pub fn build_layout(
    text_pre_len: usize,
    clip_tokens: &[usize],
    schedule: &AggregationSchedule,
    text_post_len: usize,
) -> Result<SequenceLayout, HpsiError> {
    let tpf = schedule.tokens_per_frame;
    let need = schedule.level_size(1);
    let mut segments = Vec::new();
    let mut clips = Vec::with_capacity(clip_tokens.len());
    let mut cursor = 0;
    let mut push = |kind, len, cursor: &mut usize| {
        let seg = Segment {
            kind,
            offset: *cursor,
            len,
        };
        *cursor += len;
        segments.push(seg);
    };

    push(SegmentKind::TextPre, text_pre_len, &mut cursor);
    let text_pre = 0..text_pre_len;
    for (i, &n_v) in clip_tokens.iter().enumerate() {
        if n_v < need {
            return Err(HpsiError::Size(format!(
                "clip {} has {n_v} visual tokens, level 1 needs at least {need}",
                i + 1
            )));
        }
        if n_v < tpf {
            return Err(HpsiError::Size(format!(
                "clip {} has {n_v} visual tokens, fewer than one frame ({tpf})",
                i + 1
            )));
        }
        let start = cursor;
        push(SegmentKind::Visual { clip: i }, n_v, &mut cursor);
        let visual = start..cursor;
        let mut agg = Vec::with_capacity(schedule.levels);
        for j in 1..=schedule.levels {
            let s = cursor;
            push(SegmentKind::Agg { clip: i, level: j }, schedule.level_size(j), &mut cursor);
            agg.push(s..cursor);
        }
        clips.push(ClipSpan {
            first_frame: visual.start..visual.start + tpf,
            visual,
            agg,
        });
    }
    let post_start = cursor;
    push(SegmentKind::TextPost, text_post_len, &mut cursor);

    Ok(SequenceLayout {
        segments,
        text_pre,
        text_post: post_start..cursor,
        clips,
        levels: schedule.levels,
        tokens_per_frame: tpf,
    })
}
