//! 3D position IDs with the temporal axis extended for aggregation tokens.
//!
//! The base video grid `(T, H, W)` gets `N_clips * N_comp` extra temporal
//! slots. Spatial IDs are unchanged, so an aggregation token placed in an
//! extra slot reuses the spatial indices of an ordinary frame token.

use serde::{Deserialize, Serialize};

use super::{AggregationSchedule, HpsiError, SegmentKind, SequenceLayout};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionParams {
    /// Temporal stride between slots.
    pub dt: f64,
    /// Temporal scale.
    pub tau: f64,
    /// Spatial merge size.
    pub s_merge: usize,
}

impl Default for PositionParams {
    fn default() -> Self {
        Self {
            dt: 1.0,
            tau: 1.0,
            s_merge: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoGrid {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionGrid3D {
    pub t_extended: usize,
    pub p_t: Vec<f64>,
    pub p_h: Vec<usize>,
    pub p_w: Vec<usize>,
    /// `(t, h, w)` triples in temporal-major, then height, then width order.
    pub triples: Vec<(f64, usize, usize)>,
}

impl PositionGrid3D {
    pub fn spatial_len(&self) -> usize {
        self.p_h.len() * self.p_w.len()
    }

    /// Triple at temporal slot `slot` and merged spatial cell `(h, w)`.
    pub fn at(&self, slot: usize, h: usize, w: usize) -> (f64, usize, usize) {
        self.triples[(slot * self.p_h.len() + h) * self.p_w.len() + w]
    }
}

/// Extended position grid for `n_clips` clips, each adding `n_comp` temporal slots.
pub fn extended_grid(
    grid: VideoGrid,
    n_clips: usize,
    n_comp: usize,
    params: PositionParams,
) -> Result<PositionGrid3D, HpsiError> {
    let s = params.s_merge;
    if s == 0 || !grid.h.is_multiple_of(s) || !grid.w.is_multiple_of(s) {
        return Err(HpsiError::Grid(format!(
            "grid {}x{} is not divisible by merge size {s}",
            grid.h, grid.w
        )));
    }
    let t_extended = grid.t + n_clips * n_comp;
    let step = params.dt * params.tau;
    let p_t: Vec<f64> = (0..t_extended).map(|i| i as f64 * step).collect();
    let p_h: Vec<usize> = (0..grid.h / s).collect();
    let p_w: Vec<usize> = (0..grid.w / s).collect();
    let mut triples = Vec::with_capacity(t_extended * p_h.len() * p_w.len());
    for &t in &p_t {
        for &h in &p_h {
            triples.extend(p_w.iter().map(|&w| (t, h, w)));
        }
    }
    Ok(PositionGrid3D {
        t_extended,
        p_t,
        p_h,
        p_w,
        triples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TokenPosition {
    pub pos: usize,
    pub slot: usize,
    pub t: f64,
    pub h: usize,
    pub w: usize,
}

/// Per-token positions for every visual and aggregation token of a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SequencePositions {
    pub grid: PositionGrid3D,
    /// Temporal slots reserved per clip for its aggregation tokens.
    pub n_comp: usize,
    pub tokens: Vec<TokenPosition>,
}

/// Maps the layout's video tokens onto the extended grid.
///
/// Each clip occupies `clip_frames` frame slots followed by its aggregation
/// slots, so temporal IDs never decrease along the sequence. Each level
/// starts on a fresh slot and fills cells in row-major spatial order.
pub fn build_position_ids(
    layout: &SequenceLayout,
    schedule: &AggregationSchedule,
    params: PositionParams,
    grid_hw: (usize, usize),
) -> Result<SequencePositions, HpsiError> {
    let (h, w) = grid_hw;
    let s = params.s_merge;
    if s == 0 || h % s != 0 || w % s != 0 {
        return Err(HpsiError::Grid(format!(
            "grid {h}x{w} is not divisible by merge size {s}"
        )));
    }
    let (hs, ws) = (h / s, w / s);
    let cells = hs * ws;
    if cells != schedule.tokens_per_frame {
        return Err(HpsiError::Grid(format!(
            "merged grid has {cells} cells per frame but frames carry {} tokens",
            schedule.tokens_per_frame
        )));
    }
    let frames = schedule.clip_frames;
    for (i, span) in layout.clips.iter().enumerate() {
        if span.visual_len() != frames * cells {
            return Err(HpsiError::Grid(format!(
                "clip {} has {} visual tokens, expected {frames} frames of {cells}",
                i + 1,
                span.visual_len()
            )));
        }
    }
    let level_slots: Vec<usize> = schedule
        .level_sizes()
        .iter()
        .map(|n| n.div_ceil(cells))
        .collect();
    let n_comp: usize = level_slots.iter().sum();
    let n_clips = layout.num_clips();
    let grid = extended_grid(
        VideoGrid {
            t: n_clips * frames,
            h,
            w,
        },
        n_clips,
        n_comp,
        params,
    )?;

    let block = frames + n_comp;
    let mut tokens = Vec::new();
    for seg in &layout.segments {
        let (base_slot, clip) = match seg.kind {
            SegmentKind::Visual { clip } => (clip * block, clip),
            SegmentKind::Agg { clip, level } => {
                let offset: usize = level_slots[..level - 1].iter().sum();
                (clip * block + frames + offset, clip)
            }
            SegmentKind::TextPre | SegmentKind::TextPost => continue,
        };
        debug_assert!(clip < n_clips);
        for k in 0..seg.len {
            let slot = base_slot + k / cells;
            let cell = k % cells;
            let (t, hh, ww) = grid.at(slot, cell / ws, cell % ws);
            tokens.push(TokenPosition {
                pos: seg.offset + k,
                slot,
                t,
                h: hh,
                w: ww,
            });
        }
    }
    Ok(SequencePositions {
        grid,
        n_comp,
        tokens,
    })
}
