mod common;

use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use thinkstream_core::atdm::{run_episode, AtdmConfig, EventKind, TraceStatus};
use thinkstream_core::backend::ScriptedOracle;
use thinkstream_core::eval::{random_spec, DatasetOptions};
use thinkstream_core::hpsi::{
    adapter_pool, build_layout, build_mask, build_position_ids, AggregationSchedule, MaskOptions, PositionParams,
};

use common::MaskCase;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masks_are_causal_with_self_visibility(seed in any::<u64>()) {
        let case = MaskCase::random(&mut ChaCha8Rng::seed_from_u64(seed));
        let schedule = AggregationSchedule {
            layers: 12,
            n_vc: case.n_vc,
            clip_frames: case.n_v[0] / case.tokens_per_frame,
            tokens_per_frame: case.tokens_per_frame,
            d: 2,
            levels: case.levels,
        };
        let layout = build_layout(case.text_pre, &case.n_v, &schedule, case.text_post).unwrap();
        let mask = build_mask(&layout, &case.active, MaskOptions::default()).unwrap();
        for r in 0..mask.len() {
            prop_assert!(mask.visible(r).all(|c| c <= r));
            prop_assert_eq!(mask.get(r, r), mask.is_active(r));
        }
    }

    #[test]
    fn pooled_rows_stay_within_segment_range(
        n in 1usize..40,
        frac in 0.0f64..1.0,
        values in proptest::collection::vec(-1e3f64..1e3, 40),
    ) {
        let m = 1 + ((n - 1) as f64 * frac) as usize;
        let x = Array2::from_shape_fn((n, 1), |(r, _)| values[r]);
        let p = adapter_pool(x.view(), m).unwrap();
        let (lo, hi) = values[..n].iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        prop_assert!(p.iter().all(|&v| v >= lo - 1e-9 && v <= hi + 1e-9));
    }

    #[test]
    fn constant_rows_pool_exactly(n in 1usize..40, m_frac in 0.0f64..1.0, c in -1e6f64..1e6) {
        let m = 1 + ((n - 1) as f64 * m_frac) as usize;
        let x = Array2::from_elem((n, 3), c);
        prop_assert!(adapter_pool(x.view(), m).unwrap().iter().all(|&v| v == c));
    }

    #[test]
    fn temporal_ids_never_decrease(n_clips in 1usize..4, frames in 3usize..6, n_vc in 1usize..4) {
        let schedule = AggregationSchedule::new(6, n_vc, frames, 4, 2).unwrap();
        let layout = build_layout(1, &vec![frames * 4; n_clips], &schedule, 1).unwrap();
        let p = build_position_ids(&layout, &schedule, PositionParams::default(), (4, 4)).unwrap();
        prop_assert!(p.tokens.windows(2).all(|w| w[0].t <= w[1].t && w[0].pos < w[1].pos));
        prop_assert!(p.tokens.iter().all(|t| t.h < 2 && t.w < 2));
    }

    #[test]
    fn controller_answers_exactly_when_resolved(seed in any::<u64>(), unresolvable: bool, drop: bool, w_par in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = random_spec(&mut rng, unresolvable, drop, &DatasetOptions::default());
        let g = spec.build().unwrap();
        let oracle = ScriptedOracle::new(&g.script);
        let cfg = AtdmConfig { w_par, ..AtdmConfig::default() };
        let trace = run_episode(&g.stream, &g.episode, &oracle, cfg, None).unwrap();

        prop_assert_eq!(trace.status == TraceStatus::Answered, spec.resolvable());
        prop_assert_eq!(trace.answer_clip, spec.completion_clip());
        prop_assert_eq!(trace.reflections, usize::from(spec.drop.is_some()));
        prop_assert!(trace.events.windows(2).all(|w| w[0].t <= w[1].t));
        prop_assert!(trace.events.iter().all(|e| (0.0..=1.0).contains(&e.rho)));
        for e in trace.events.iter().filter(|e| e.event == EventKind::Answer) {
            prop_assert_eq!(e.rho, 1.0);
        }
        if let (Some(t_r), Some(d)) = (trace.timing.t_r, trace.timing.delta) {
            prop_assert!(t_r >= g.episode.t_q);
            prop_assert_eq!(d, 0.0);
        }
    }
}
