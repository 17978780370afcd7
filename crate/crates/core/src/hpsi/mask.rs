use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{HpsiError, SequenceLayout};

/// Switches for the visibility rules, so each resolution can be ablated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskOptions {
    /// Keep each clip's first-frame tokens visible to all later rows.
    pub first_frame_anchor: bool,
    /// Aggregation tokens see earlier tokens of their own level and clip.
    pub same_level_context: bool,
    /// Raw visual tokens see the final-level summaries of earlier clips.
    pub raw_sees_prior_summaries: bool,
}

impl Default for MaskOptions {
    fn default() -> Self {
        Self {
            first_frame_anchor: true,
            same_level_context: true,
            raw_sees_prior_summaries: true,
        }
    }
}

/// Row-major boolean visibility: `get(r, c)` means row `r` may attend to column `c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    n: usize,
    bits: Vec<bool>,
    active: Vec<bool>,
    /// Highest aggregation level active in each clip.
    pub active_levels: Vec<usize>,
}

impl AttentionMask {
    fn empty(n: usize) -> Self {
        Self {
            n,
            bits: vec![false; n * n],
            active: vec![true; n],
            active_levels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.n + c]
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.bits[r * self.n..(r + 1) * self.n]
    }

    /// Whether position `p` exists at this band (not an uninserted level).
    pub fn is_active(&self, p: usize) -> bool {
        self.active[p]
    }

    /// Visible columns of row `r` in increasing order.
    pub fn visible(&self, r: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(r)
            .iter()
            .enumerate()
            .filter_map(|(c, &v)| v.then_some(c))
    }

    /// Visible columns of row `r` as maximal half-open ranges.
    pub fn visible_ranges(&self, r: usize) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for c in self.visible(r) {
            match out.last_mut() {
                Some(last) if last.1 == c => last.1 = c + 1,
                _ => out.push((c, c + 1)),
            }
        }
        out
    }

    /// Visible-position count over the whole matrix.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Allows `r` to see `cols`, clipped to `c <= r`.
    fn allow(&mut self, r: usize, cols: &Range<usize>) {
        let hi = cols.end.min(r + 1);
        if cols.start < hi {
            let base = r * self.n;
            self.bits[base + cols.start..base + hi].fill(true);
        }
    }
}

/// Builds the structured sparse mask for one band.
///
/// `active_levels[i]` is the highest aggregation level inserted for clip `i`
/// (0 means none). Rules, all intersected with causality:
///
/// * raw visual rows of clip `i`: leading text, own clip causally, first-frame
///   anchors of earlier clips, final-level tokens of earlier clips;
/// * level-`j` rows: level `j-1` of the same clip (raw tokens for `j = 1`),
///   earlier same-level tokens, anchors of clips up to `i`, final-level tokens
///   of earlier clips;
/// * text rows: text causally, the highest active level of every clip, and
///   every anchor.
///
/// Positions of uninserted levels are inactive and appear in no row or column.
pub fn build_mask(
    layout: &SequenceLayout,
    active_levels: &[usize],
    opts: MaskOptions,
) -> Result<AttentionMask, HpsiError> {
    if active_levels.len() != layout.num_clips() {
        return Err(HpsiError::Layout(format!(
            "{} active levels given for {} clips",
            active_levels.len(),
            layout.num_clips()
        )));
    }
    if let Some((i, &a)) = active_levels
        .iter()
        .enumerate()
        .find(|(_, &a)| a > layout.levels)
    {
        return Err(HpsiError::Layout(format!(
            "clip {} activates level {a} but the layout holds {} levels",
            i + 1,
            layout.levels
        )));
    }

    let top = layout.levels;
    let mut m = AttentionMask::empty(layout.len());
    m.active_levels = active_levels.to_vec();
    for (span, &act) in layout.clips.iter().zip(active_levels) {
        for j in act + 1..=top {
            for p in span.level(j).clone() {
                m.active[p] = false;
            }
        }
    }

    // Final-level summaries of clip i that later rows may read.
    let summary = |i: usize| -> Option<&Range<usize>> {
        (active_levels[i] >= top).then(|| layout.clips[i].level(top))
    };

    for (i, span) in layout.clips.iter().enumerate() {
        for r in span.visual.clone() {
            m.allow(r, &layout.text_pre);
            m.allow(r, &span.visual);
            for k in 0..i {
                if opts.first_frame_anchor {
                    m.allow(r, &layout.clips[k].first_frame);
                }
                if opts.raw_sees_prior_summaries {
                    if let Some(s) = summary(k) {
                        m.allow(r, s);
                    }
                }
            }
        }
        for j in 1..=active_levels[i] {
            let source = if j == 1 {
                span.visual.clone()
            } else {
                span.level(j - 1).clone()
            };
            for r in span.level(j).clone() {
                m.allow(r, &source);
                if opts.same_level_context {
                    m.allow(r, span.level(j));
                } else {
                    m.allow(r, &(r..r + 1));
                }
                for k in 0..=i {
                    if opts.first_frame_anchor {
                        m.allow(r, &layout.clips[k].first_frame);
                    }
                    if k < i {
                        if let Some(s) = summary(k) {
                            m.allow(r, s);
                        }
                    }
                }
            }
        }
    }

    for r in layout.text_pre.clone() {
        m.allow(r, &layout.text_pre);
    }
    for r in layout.text_post.clone() {
        m.allow(r, &layout.text_pre);
        m.allow(r, &layout.text_post);
        for (span, &act) in layout.clips.iter().zip(active_levels) {
            if act >= 1 {
                m.allow(r, span.level(act));
            }
            if opts.first_frame_anchor {
                m.allow(r, &span.first_frame);
            }
        }
    }
    Ok(m)
}
