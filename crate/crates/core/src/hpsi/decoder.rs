//! Deterministic single-head toy decoder that exercises the aggregation schedule.
//!
//! Every layer is a pre-norm block `h + attn(ln(h))` followed by
//! `h + ffn(ln(h))`. At the first layer of each third a new aggregation level
//! is spliced in, initialised by pooling the current hidden rows of the level
//! below. Attention is computed row by row over the visible columns in
//! increasing order, so a row's output does not depend on which other rows
//! happen to be computed in the same call. That is what lets an incremental
//! call, which only recomputes new clips, reproduce a full-prefix call bit for bit.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    adapter_pool, build_layout, build_mask, AggregationSchedule, AttentionMask, HpsiError,
    MaskOptions, SequenceLayout,
};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
struct LayerWeights {
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
    wo: Array2<f64>,
    w1: Array2<f64>,
    w2: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ToyDecoder {
    schedule: AggregationSchedule,
    mask_opts: MaskOptions,
    seed: u64,
    layers: Vec<LayerWeights>,
    head: Array2<f64>,
}

/// Hidden rows of one earlier clip that later positions can read: its
/// first-frame anchor and the rows of its highest active level, at every
/// layer input (`layers + 1` entries, the last being the decoder output).
#[derive(Debug, Clone, PartialEq)]
pub struct ClipMemory {
    pub visual_len: usize,
    pub anchor: Vec<Array2<f64>>,
    pub summary: Vec<Array2<f64>>,
}

impl ClipMemory {
    /// Final-layer summary tokens, shape `(top level rows, d)`.
    pub fn summary_tokens(&self) -> &Array2<f64> {
        self.summary.last().expect("memory has at least one layer")
    }
}

/// Carried HPSI half of the cognition state.
#[derive(Debug, Clone, PartialEq)]
pub struct CarriedState {
    pub seed: u64,
    pub schedule: AggregationSchedule,
    pub mask_opts: MaskOptions,
    pub text_pre: Array2<f64>,
    pub clips: Vec<ClipMemory>,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderInput<'a> {
    pub text_pre: ArrayView2<'a, f64>,
    pub clips: &'a [Array2<f64>],
    pub text_post: ArrayView2<'a, f64>,
}

/// Per-layer snapshot, kept when tracing is requested.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub layer: usize,
    /// Layer input after any splice (`h` fed to the block).
    pub input: Array2<f64>,
    /// Rows that were computed in this call.
    pub computed: Vec<bool>,
    pub mask: AttentionMask,
    /// Attention output before the residual add.
    pub attention: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct DecoderOutput {
    pub layout: SequenceLayout,
    /// Projected final states of the trailing text, `(text_post_len, d)`.
    pub text_logits: Array2<f64>,
    pub carried: CarriedState,
    /// Aggregation tokens of the clips computed in this call:
    /// `[clip][layer][level]`, levels present at that layer's input.
    pub aggregates: Vec<Vec<Vec<Array2<f64>>>>,
    pub trace: Vec<LayerTrace>,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    let normal = Normal::new(0.0, scale).expect("positive scale");
    Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng))
}

fn layer_norm(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    x.iter().map(|v| (v - mean) * inv).collect()
}

/// `x^T W` for a row vector `x`, accumulated in a fixed order.
fn vec_mat(x: &[f64], w: &Array2<f64>) -> Vec<f64> {
    let mut out = vec![0.0; w.ncols()];
    for (i, &xi) in x.iter().enumerate() {
        for (o, &wij) in out.iter_mut().zip(w.row(i).iter()) {
            *o += xi * wij;
        }
    }
    out
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x)).tanh())
}

impl ToyDecoder {
    pub fn new(schedule: AggregationSchedule, mask_opts: MaskOptions, seed: u64) -> Result<Self, HpsiError> {
        schedule.validate()?;
        let d = schedule.d;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 1.0 / (d as f64).sqrt();
        let layers = (0..schedule.layers)
            .map(|_| LayerWeights {
                wq: gaussian(&mut rng, d, d, s),
                wk: gaussian(&mut rng, d, d, s),
                wv: gaussian(&mut rng, d, d, s),
                wo: gaussian(&mut rng, d, d, s),
                w1: gaussian(&mut rng, d, 4 * d, s),
                w2: gaussian(&mut rng, 4 * d, d, 1.0 / (4.0 * d as f64).sqrt()),
            })
            .collect();
        let head = gaussian(&mut rng, d, d, s);
        Ok(Self {
            schedule,
            mask_opts,
            seed,
            layers,
            head,
        })
    }

    pub fn schedule(&self) -> &AggregationSchedule {
        &self.schedule
    }

    /// Masked single-head attention for the rows in `rows`, before the residual.
    ///
    /// Rows not listed are left at zero. Columns outside a row's mask never
    /// enter its computation.
    pub fn attention(&self, layer: usize, hidden: ArrayView2<f64>, mask: &AttentionMask, rows: &[bool]) -> Array2<f64> {
        let w = &self.layers[layer];
        let n = hidden.nrows();
        let d = hidden.ncols();
        let scale = 1.0 / (d as f64).sqrt();
        // Keys and values for every row that is visible to some computed row.
        let mut needed = vec![false; n];
        for r in (0..n).filter(|&r| rows[r]) {
            for c in mask.visible(r) {
                needed[c] = true;
            }
        }
        let mut keys = vec![Vec::new(); n];
        let mut values = vec![Vec::new(); n];
        for c in (0..n).filter(|&c| needed[c]) {
            let x = layer_norm(hidden.row(c).as_slice().expect("standard layout"));
            keys[c] = vec_mat(&x, &w.wk);
            values[c] = vec_mat(&x, &w.wv);
        }
        let mut out = Array2::zeros((n, d));
        for r in (0..n).filter(|&r| rows[r]) {
            let q = vec_mat(&layer_norm(hidden.row(r).as_slice().expect("standard layout")), &w.wq);
            let cols: Vec<usize> = mask.visible(r).collect();
            let scores: Vec<f64> = cols
                .iter()
                .map(|&c| q.iter().zip(&keys[c]).map(|(a, b)| a * b).sum::<f64>() * scale)
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            let mut mixed = vec![0.0; d];
            for (&c, e) in cols.iter().zip(&exps) {
                let p = e / z;
                for (m, v) in mixed.iter_mut().zip(&values[c]) {
                    *m += p * v;
                }
            }
            let o = vec_mat(&mixed, &w.wo);
            out.row_mut(r).assign(&ndarray::ArrayView1::from(&o));
        }
        out
    }

    fn feed_forward(&self, layer: usize, x: &[f64]) -> Vec<f64> {
        let w = &self.layers[layer];
        let hidden: Vec<f64> = vec_mat(&layer_norm(x), &w.w1).into_iter().map(gelu).collect();
        vec_mat(&hidden, &w.w2)
    }

    /// Full-prefix forward over all clips in `input`.
    pub fn forward(&self, input: DecoderInput<'_>, trace: bool) -> Result<DecoderOutput, HpsiError> {
        self.run(&[], input, trace)
    }

    /// Forward that reuses `carried` for the clips it already covers and only
    /// computes `input.clips` (the new ones) plus the text.
    pub fn forward_incremental(
        &self,
        carried: &CarriedState,
        input: DecoderInput<'_>,
        trace: bool,
    ) -> Result<DecoderOutput, HpsiError> {
        if carried.seed != self.seed || carried.schedule != self.schedule || carried.mask_opts != self.mask_opts {
            return Err(HpsiError::StateMismatch(
                "decoder seed, schedule or mask options differ".into(),
            ));
        }
        if carried.text_pre != input.text_pre {
            return Err(HpsiError::StateMismatch("leading text differs".into()));
        }
        self.run(&carried.clips, input, trace)
    }

    fn check_input(&self, input: &DecoderInput<'_>) -> Result<(), HpsiError> {
        let d = self.schedule.d;
        let widths = [input.text_pre.ncols(), input.text_post.ncols()];
        if input.text_pre.nrows() > 0 && widths[0] != d || input.text_post.nrows() > 0 && widths[1] != d {
            return Err(HpsiError::Shape(format!("text embeddings must have width {d}")));
        }
        for (i, c) in input.clips.iter().enumerate() {
            if c.ncols() != d {
                return Err(HpsiError::Shape(format!(
                    "clip {} has width {}, expected {d}",
                    i + 1,
                    c.ncols()
                )));
            }
            if c.iter().any(|x| !x.is_finite()) {
                return Err(HpsiError::NonFinite { layer: 0 });
            }
        }
        if input.text_pre.iter().chain(input.text_post.iter()).any(|x| !x.is_finite()) {
            return Err(HpsiError::NonFinite { layer: 0 });
        }
        Ok(())
    }

    fn run(&self, cached: &[ClipMemory], input: DecoderInput<'_>, trace: bool) -> Result<DecoderOutput, HpsiError> {
        self.check_input(&input)?;
        let s = &self.schedule;
        let d = s.d;
        let top = s.top_level();
        let n_cached = cached.len();
        let counts: Vec<usize> = cached
            .iter()
            .map(|m| m.visual_len)
            .chain(input.clips.iter().map(|c| c.nrows()))
            .collect();
        let layout = build_layout(input.text_pre.nrows(), &counts, s, input.text_post.nrows())?;
        let n = layout.len();

        // Rows this call computes: text plus every new clip's block.
        let mut computed = vec![false; n];
        for p in layout.text_pre.clone().chain(layout.text_post.clone()) {
            computed[p] = true;
        }
        for span in &layout.clips[n_cached..] {
            computed[span.visual.start..span.level(top).end].fill(true);
        }

        let mut h = Array2::<f64>::zeros((n, d));
        h.slice_mut(ndarray::s![layout.text_pre.clone(), ..]).assign(&input.text_pre);
        h.slice_mut(ndarray::s![layout.text_post.clone(), ..]).assign(&input.text_post);
        for (span, clip) in layout.clips[n_cached..].iter().zip(input.clips) {
            h.slice_mut(ndarray::s![span.visual.clone(), ..]).assign(clip);
        }

        let mut memories: Vec<ClipMemory> = (n_cached..layout.num_clips())
            .map(|i| ClipMemory {
                visual_len: counts[i],
                anchor: Vec::with_capacity(s.layers + 1),
                summary: Vec::with_capacity(s.layers + 1),
            })
            .collect();
        let mut aggregates: Vec<Vec<Vec<Array2<f64>>>> = vec![Vec::with_capacity(s.layers); memories.len()];
        let mut traces = Vec::new();

        for layer in 0..s.layers {
            let band = s.active_level(layer);
            if let Some(level) = s.inserted_at(layer) {
                for span in &layout.clips[n_cached..] {
                    let src = if level == 1 {
                        span.visual.clone()
                    } else {
                        span.level(level - 1).clone()
                    };
                    let init = adapter_pool(h.slice(ndarray::s![src, ..]), s.level_size(level))?;
                    h.slice_mut(ndarray::s![span.level(level).clone(), ..]).assign(&init);
                }
            }
            // Cached clips contribute their anchor and band-level rows at this layer.
            for (span, mem) in layout.clips.iter().zip(cached) {
                h.slice_mut(ndarray::s![span.first_frame.clone(), ..]).assign(&mem.anchor[layer]);
                h.slice_mut(ndarray::s![span.level(band).clone(), ..]).assign(&mem.summary[layer]);
            }
            self.record(&layout, n_cached, &h, band, layer, &mut memories, &mut aggregates);

            let mask = build_mask(&layout, &vec![band; layout.num_clips()], self.mask_opts)?;
            let rows: Vec<bool> = (0..n).map(|p| computed[p] && mask.is_active(p)).collect();
            let attn = self.attention(layer, h.view(), &mask, &rows);
            if trace {
                traces.push(LayerTrace {
                    layer,
                    input: h.clone(),
                    computed: rows.clone(),
                    mask: mask.clone(),
                    attention: attn.clone(),
                });
            }
            for r in (0..n).filter(|&r| rows[r]) {
                let mut x: Vec<f64> = h.row(r).iter().zip(attn.row(r)).map(|(a, b)| a + b).collect();
                let f = self.feed_forward(layer, &x);
                for (xi, fi) in x.iter_mut().zip(f) {
                    *xi += fi;
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(HpsiError::NonFinite { layer });
                }
                h.row_mut(r).assign(&ndarray::ArrayView1::from(&x));
            }
        }
        self.record(&layout, n_cached, &h, top, s.layers, &mut memories, &mut aggregates);

        let mut text_logits = Array2::zeros((layout.text_post.len(), d));
        for (i, r) in layout.text_post.clone().enumerate() {
            let y = vec_mat(&layer_norm(h.row(r).as_slice().expect("standard layout")), &self.head);
            text_logits.row_mut(i).assign(&ndarray::ArrayView1::from(&y));
        }

        let mut clips = cached.to_vec();
        clips.extend(memories);
        Ok(DecoderOutput {
            layout,
            text_logits,
            carried: CarriedState {
                seed: self.seed,
                schedule: self.schedule.clone(),
                mask_opts: self.mask_opts,
                text_pre: input.text_pre.to_owned(),
                clips,
            },
            aggregates,
            trace: traces,
        })
    }

    /// Snapshots anchor/summary rows (and aggregates for the objective) of new clips.
    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        layout: &SequenceLayout,
        n_cached: usize,
        h: &Array2<f64>,
        band: usize,
        layer: usize,
        memories: &mut [ClipMemory],
        aggregates: &mut [Vec<Vec<Array2<f64>>>],
    ) {
        for (k, span) in layout.clips[n_cached..].iter().enumerate() {
            memories[k]
                .anchor
                .push(h.slice(ndarray::s![span.first_frame.clone(), ..]).to_owned());
            memories[k]
                .summary
                .push(h.slice(ndarray::s![span.level(band).clone(), ..]).to_owned());
            if layer < self.schedule.layers {
                aggregates[k].push(
                    (1..=band)
                        .map(|j| h.slice(ndarray::s![span.level(j).clone(), ..]).to_owned())
                        .collect(),
                );
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(seed: u64, rows: usize, d: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        gaussian(&mut rng, rows, d, 1.0)
    }

    fn setup() -> (ToyDecoder, Array2<f64>, Vec<Array2<f64>>, Array2<f64>) {
        let s = AggregationSchedule::new(6, 2, 2, 4, 8).unwrap();
        let dec = ToyDecoder::new(s, MaskOptions::default(), 11).unwrap();
        (dec, clip(1, 3, 8), vec![clip(2, 8, 8), clip(3, 8, 8)], clip(4, 2, 8))
    }

    #[test]
    fn deterministic_for_same_seed() {
        let (dec, pre, clips, post) = setup();
        let input = DecoderInput {
            text_pre: pre.view(),
            clips: &clips,
            text_post: post.view(),
        };
        let a = dec.forward(input, false).unwrap();
        let b = dec.forward(input, false).unwrap();
        assert_eq!(a.text_logits, b.text_logits);
        assert_eq!(a.carried, b.carried);
    }

    #[test]
    fn incremental_matches_full_bitwise() {
        let (dec, pre, clips, post) = setup();
        let full = dec
            .forward(
                DecoderInput {
                    text_pre: pre.view(),
                    clips: &clips,
                    text_post: post.view(),
                },
                false,
            )
            .unwrap();
        let first = dec
            .forward(
                DecoderInput {
                    text_pre: pre.view(),
                    clips: &clips[..1],
                    text_post: post.view(),
                },
                false,
            )
            .unwrap();
        let inc = dec
            .forward_incremental(
                &first.carried,
                DecoderInput {
                    text_pre: pre.view(),
                    clips: &clips[1..],
                    text_post: post.view(),
                },
                false,
            )
            .unwrap();
        assert_eq!(full.text_logits, inc.text_logits);
        assert_eq!(full.carried, inc.carried);
        assert_eq!(inc.carried.clips[1].summary_tokens().dim(), (2, 8));
    }

    #[test]
    fn constant_clip_initialises_constant_aggregates() {
        let s = AggregationSchedule::new(3, 1, 1, 4, 8).unwrap();
        let dec = ToyDecoder::new(s, MaskOptions::default(), 0).unwrap();
        let c = vec![Array2::from_elem((4, 8), 0.375)];
        let empty = Array2::zeros((0, 8));
        let out = dec
            .forward(
                DecoderInput {
                    text_pre: empty.view(),
                    clips: &c,
                    text_post: empty.view(),
                },
                true,
            )
            .unwrap();
        // level 1 is spliced at layer 0 from the raw (constant) tokens
        let l1 = &out.aggregates[0][0][0];
        assert!(l1.iter().all(|&x| x == 0.375));
    }

    #[test]
    fn mismatched_carried_state_rejected() {
        let (dec, pre, clips, post) = setup();
        let first = dec
            .forward(
                DecoderInput {
                    text_pre: pre.view(),
                    clips: &clips[..1],
                    text_post: post.view(),
                },
                false,
            )
            .unwrap();
        let other_pre = clip(9, 3, 8);
        let r = dec.forward_incremental(
            &first.carried,
            DecoderInput {
                text_pre: other_pre.view(),
                clips: &clips[1..],
                text_post: post.view(),
            },
            false,
        );
        assert!(matches!(r, Err(HpsiError::StateMismatch(_))));
    }

    #[test]
    fn wrong_width_is_shape_error() {
        let (dec, pre, _, post) = setup();
        let bad = vec![clip(5, 8, 7)];
        let r = dec.forward(
            DecoderInput {
                text_pre: pre.view(),
                clips: &bad,
                text_post: post.view(),
            },
            false,
        );
        assert!(matches!(r, Err(HpsiError::Shape(_))));
    }

    #[test]
    fn non_finite_input_rejected() {
        let (dec, pre, mut clips, post) = setup();
        clips[0][[0, 0]] = f64::NAN;
        let r = dec.forward(
            DecoderInput {
                text_pre: pre.view(),
                clips: &clips,
                text_post: post.view(),
            },
            false,
        );
        assert!(matches!(r, Err(HpsiError::NonFinite { .. })));
    }
}
