//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the library code it is checked against.

#![allow(dead_code)]

use std::path::PathBuf;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-2.0..2.0))
}

// ---------------------------------------------------------------- pooling

/// Segment sums divided by segment length, boundaries `floor(k n / m)`.
pub fn pool_oracle(x: &Array2<f64>, m: usize) -> Array2<f64> {
    let (n, d) = x.dim();
    let mut out = Array2::zeros((m, d));
    for k in 0..m {
        let lo = (k * n) / m;
        let hi = ((k + 1) * n) / m;
        for c in 0..d {
            let mut s = 0.0;
            for r in lo..hi {
                s += x[[r, c]];
            }
            out[[k, c]] = s / (hi - lo) as f64;
        }
    }
    out
}

// ---------------------------------------------------------------- layout and mask

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    TextPre,
    /// `idx` counts from the clip's first raw token.
    Visual { clip: usize, idx: usize },
    Agg { clip: usize, level: usize },
    TextPost,
}

#[derive(Debug, Clone)]
pub struct MaskCase {
    pub text_pre: usize,
    pub text_post: usize,
    pub n_v: Vec<usize>,
    pub tokens_per_frame: usize,
    pub n_vc: usize,
    pub levels: usize,
    pub active: Vec<usize>,
    pub first_frame: bool,
    pub same_level: bool,
    pub raw_sees_summaries: bool,
}

impl MaskCase {
    /// Role of every position, text first, then per clip raw tokens and
    /// levels `1..=levels` of `(4 - j) n_vc` rows, then trailing text.
    pub fn roles(&self) -> Vec<Role> {
        let mut out = vec![Role::TextPre; self.text_pre];
        for (clip, &n) in self.n_v.iter().enumerate() {
            out.extend((0..n).map(|idx| Role::Visual { clip, idx }));
            for level in 1..=self.levels {
                out.extend(std::iter::repeat_n(Role::Agg { clip, level }, (4 - level) * self.n_vc));
            }
        }
        out.extend(std::iter::repeat_n(Role::TextPost, self.text_post));
        out
    }

    fn is_active(&self, role: Role) -> bool {
        match role {
            Role::Agg { clip, level } => level <= self.active[clip],
            _ => true,
        }
    }

    fn anchor(&self, role: Role) -> Option<usize> {
        match role {
            Role::Visual { clip, idx } if self.first_frame && idx < self.tokens_per_frame => Some(clip),
            _ => None,
        }
    }

    fn summary(&self, role: Role) -> Option<usize> {
        match role {
            Role::Agg { clip, level } if level == self.levels && self.active[clip] >= self.levels => Some(clip),
            _ => None,
        }
    }

    /// Visibility of column role `c` from row role `r`, before causality.
    fn rule(&self, r: Role, c: Role, same_pos: bool) -> bool {
        match r {
            Role::TextPre => c == Role::TextPre,
            Role::TextPost => {
                matches!(c, Role::TextPre | Role::TextPost)
                    || matches!(c, Role::Agg { clip, level } if self.active[clip] >= 1 && level == self.active[clip])
                    || self.anchor(c).is_some()
            }
            Role::Visual { clip: i, .. } => {
                c == Role::TextPre
                    || matches!(c, Role::Visual { clip, .. } if clip == i)
                    || self.anchor(c).is_some_and(|k| k < i)
                    || (self.raw_sees_summaries && self.summary(c).is_some_and(|k| k < i))
            }
            Role::Agg { clip: i, level: j } => {
                let source = if j == 1 {
                    matches!(c, Role::Visual { clip, .. } if clip == i)
                } else {
                    c == Role::Agg { clip: i, level: j - 1 }
                };
                let own = if self.same_level {
                    c == Role::Agg { clip: i, level: j }
                } else {
                    same_pos
                };
                source || own || self.anchor(c).is_some_and(|k| k <= i) || self.summary(c).is_some_and(|k| k < i)
            }
        }
    }

    pub fn oracle(&self) -> Vec<Vec<bool>> {
        let roles = self.roles();
        let n = roles.len();
        (0..n)
            .map(|r| {
                (0..n)
                    .map(|c| {
                        c <= r
                            && self.is_active(roles[r])
                            && self.is_active(roles[c])
                            && self.rule(roles[r], roles[c], r == c)
                    })
                    .collect()
            })
            .collect()
    }

    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let n_clips = rng.random_range(1..=5);
        let n_vc: usize = rng.random_range(1..=4);
        let layers = if rng.random_bool(0.5) { 6 } else { 12 };
        let levels = if rng.random_bool(0.8) { 3 } else { rng.random_range(1..=2) };
        let tokens_per_frame = rng.random_range(1..=4);
        let min_frames = (3 * n_vc).div_ceil(tokens_per_frame);
        let frames = rng.random_range(min_frames..=min_frames + 3);
        // the band of a random layer, occasionally perturbed per clip
        let layer: usize = rng.random_range(0..layers);
        let band = (1 + 3 * layer / layers).min(3).min(levels);
        let active = (0..n_clips)
            .map(|_| if rng.random_bool(0.3) { rng.random_range(0..=levels) } else { band })
            .collect();
        Self {
            text_pre: rng.random_range(0..=3),
            text_post: rng.random_range(0..=3),
            n_v: vec![frames * tokens_per_frame; n_clips],
            tokens_per_frame,
            n_vc,
            levels,
            active,
            first_frame: rng.random_bool(0.8),
            same_level: rng.random_bool(0.8),
            raw_sees_summaries: rng.random_bool(0.8),
        }
    }
}

// ---------------------------------------------------------------- position IDs

/// Extended grid and per-token `(slot, t, h, w)`, written step by step from
/// the algorithm: extend T, build P_t, P_h, P_w, broadcast each along the
/// other axes, stack, then place tokens.
pub struct PositionOracle {
    pub t_extended: usize,
    pub p_t: Vec<f64>,
    pub stacked: Vec<(f64, usize, usize)>,
    pub tokens: Vec<(usize, usize, f64, usize, usize)>,
}

#[allow(clippy::too_many_arguments)]
pub fn position_oracle(
    n_clips: usize,
    frames: usize,
    h: usize,
    w: usize,
    s: usize,
    dt: f64,
    tau: f64,
    level_rows: &[usize],
    text_pre: usize,
) -> PositionOracle {
    let hs = h / s;
    let ws = w / s;
    let cells = hs * ws;
    let slots: Vec<usize> = level_rows.iter().map(|&r| r.div_ceil(cells)).collect();
    let n_comp: usize = slots.iter().sum();

    // 1
    let t = n_clips * frames;
    let t_extended = t + n_clips * n_comp;
    // 2
    let p_t: Vec<f64> = (0..t_extended).map(|i| i as f64 * dt * tau).collect();
    // 3, 4
    let p_h: Vec<usize> = (0..hs).collect();
    let p_w: Vec<usize> = (0..ws).collect();
    // 5, 6, 7
    let mut m_t = vec![vec![vec![0.0; ws]; hs]; t_extended];
    let mut m_h = vec![vec![vec![0usize; ws]; hs]; t_extended];
    let mut m_w = vec![vec![vec![0usize; ws]; hs]; t_extended];
    for a in 0..t_extended {
        for b in 0..hs {
            for c in 0..ws {
                m_t[a][b][c] = p_t[a];
                m_h[a][b][c] = p_h[b];
                m_w[a][b][c] = p_w[c];
            }
        }
    }
    // 8
    let mut stacked = Vec::new();
    for a in 0..t_extended {
        for b in 0..hs {
            for c in 0..ws {
                stacked.push((m_t[a][b][c], m_h[a][b][c], m_w[a][b][c]));
            }
        }
    }

    // token placement: each clip's frames, then its levels on fresh slots
    let mut tokens = Vec::new();
    let mut pos = text_pre;
    for i in 0..n_clips {
        let base = i * (frames + n_comp);
        for k in 0..frames * cells {
            let slot = base + k / cells;
            let (b, c) = ((k % cells) / ws, (k % cells) % ws);
            tokens.push((pos, slot, m_t[slot][b][c], m_h[slot][b][c], m_w[slot][b][c]));
            pos += 1;
        }
        let mut slot0 = base + frames;
        for (j, &rows) in level_rows.iter().enumerate() {
            for k in 0..rows {
                let slot = slot0 + k / cells;
                let (b, c) = ((k % cells) / ws, (k % cells) % ws);
                tokens.push((pos, slot, m_t[slot][b][c], m_h[slot][b][c], m_w[slot][b][c]));
                pos += 1;
            }
            slot0 += slots[j];
        }
    }
    PositionOracle {
        t_extended,
        p_t,
        stacked,
        tokens,
    }
}

// ---------------------------------------------------------------- integration loss

fn frobenius_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let mut s = 0.0;
    for r in 0..a.nrows() {
        for c in 0..a.ncols() {
            let d = a[[r, c]] - b[[r, c]];
            s += d * d;
        }
    }
    s.sqrt()
}

/// Sum over layers and levels of the distance to the pooled clip tokens and
/// to the pooled previous level (the pooled clip tokens for level 1).
pub fn loss_oracle(per_layer: &[Vec<Array2<f64>>], v: &Array2<f64>, level_rows: &[usize]) -> f64 {
    let mut total = 0.0;
    for levels in per_layer {
        for j in 0..levels.len() {
            let target = pool_oracle(v, level_rows[j]);
            total += frobenius_diff(&levels[j], &target);
            let prev = if j == 0 {
                pool_oracle(v, level_rows[0])
            } else {
                pool_oracle(&levels[j - 1], level_rows[j])
            };
            total += frobenius_diff(&levels[j], &prev);
        }
    }
    total
}
