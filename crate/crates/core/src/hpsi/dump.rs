//! JSON dump formats for layouts, masks and position IDs (used by golden tests).

use serde::{Deserialize, Serialize};

use super::{AttentionMask, SegmentKind, SequenceLayout, SequencePositions, TokenPosition};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentDump {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutDump {
    pub len: usize,
    pub segments: Vec<SegmentDump>,
    /// Half-open `[start, end)` first-frame span per clip.
    pub first_frame_ranges: Vec<[usize; 2]>,
}

impl From<&SequenceLayout> for LayoutDump {
    fn from(layout: &SequenceLayout) -> Self {
        let segments = layout
            .segments
            .iter()
            .map(|s| {
                // clips are 1-based in dumps
                let (kind, clip, level) = match s.kind {
                    SegmentKind::TextPre => ("text_pre", None, None),
                    SegmentKind::Visual { clip } => ("visual", Some(clip + 1), None),
                    SegmentKind::Agg { clip, level } => ("agg", Some(clip + 1), Some(level)),
                    SegmentKind::TextPost => ("text_post", None, None),
                };
                SegmentDump {
                    kind: kind.to_string(),
                    clip,
                    level,
                    offset: s.offset,
                    len: s.len,
                }
            })
            .collect();
        LayoutDump {
            len: layout.len(),
            segments,
            first_frame_ranges: layout
                .clips
                .iter()
                .map(|c| [c.first_frame.start, c.first_frame.end])
                .collect(),
        }
    }
}

/// One band's mask as row-indexed lists of visible `[start, end)` column ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskDump {
    pub band: usize,
    pub layers: Vec<usize>,
    pub rows: Vec<Vec<[usize; 2]>>,
}

impl MaskDump {
    pub fn from_mask(mask: &AttentionMask, band: usize, layers: Vec<usize>) -> Self {
        let rows = (0..mask.len())
            .map(|r| mask.visible_ranges(r).into_iter().map(|(a, b)| [a, b]).collect())
            .collect();
        Self { band, layers, rows }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositionDump {
    pub t_extended: usize,
    pub n_comp: usize,
    pub tokens: Vec<TokenPosition>,
}

impl From<&SequencePositions> for PositionDump {
    fn from(p: &SequencePositions) -> Self {
        Self {
            t_extended: p.grid.t_extended,
            n_comp: p.n_comp,
            tokens: p.tokens.clone(),
        }
    }
}
