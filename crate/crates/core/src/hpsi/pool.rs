use ndarray::{Array2, ArrayView2};

use super::{AggregationSchedule, HpsiError};

/// Segment bounds `[floor(k*n/m), floor((k+1)*n/m))` for `k in 0..m`.
pub fn pool_segments(n: usize, m: usize) -> Vec<(usize, usize)> {
    (0..m).map(|k| (k * n / m, (k + 1) * n / m)).collect()
}

/// Adaptive average pooling of `n` rows down to `target` rows.
///
/// Row `k` of the output is the mean of input rows in segment `k` of
/// [`pool_segments`]. Means are accumulated incrementally so that a
/// segment of identical rows reproduces that row exactly.
pub fn adapter_pool(tokens: ArrayView2<f64>, target: usize) -> Result<Array2<f64>, HpsiError> {
    let n = tokens.nrows();
    if target == 0 || target > n {
        return Err(HpsiError::Size(format!(
            "cannot pool {n} rows to {target}"
        )));
    }
    let d = tokens.ncols();
    let mut out = Array2::zeros((target, d));
    for (k, (lo, hi)) in pool_segments(n, target).into_iter().enumerate() {
        let mut row = out.row_mut(k);
        for (count, r) in (lo..hi).enumerate() {
            let w = 1.0 / (count + 1) as f64;
            for (acc, &x) in row.iter_mut().zip(tokens.row(r).iter()) {
                *acc += (x - *acc) * w;
            }
        }
    }
    Ok(out)
}

/// Transpose of the pooling map: spreads each output-row gradient evenly
/// over its segment of `n` input rows.
pub fn adapter_pool_adjoint(grad_out: ArrayView2<f64>, n: usize) -> Array2<f64> {
    let m = grad_out.nrows();
    let mut out = Array2::zeros((n, grad_out.ncols()));
    for (k, (lo, hi)) in pool_segments(n, m).into_iter().enumerate() {
        let inv = 1.0 / (hi - lo) as f64;
        for r in lo..hi {
            out.row_mut(r).scaled_add(inv, &grad_out.row(k));
        }
    }
    out
}

/// Chained initialisation `p(j) = pool(p(j-1), (4-j) N_vc)` with `p(0)` the clip tokens.
///
/// Returns one matrix per materialised level.
pub fn init_aggregation_tokens(
    clip_tokens: ArrayView2<f64>,
    schedule: &AggregationSchedule,
) -> Result<Vec<Array2<f64>>, HpsiError> {
    let need = schedule.level_size(1);
    if clip_tokens.nrows() < need {
        return Err(HpsiError::Size(format!(
            "clip has {} visual tokens, level 1 needs at least {need}",
            clip_tokens.nrows()
        )));
    }
    let mut levels: Vec<Array2<f64>> = Vec::with_capacity(schedule.levels);
    for j in 1..=schedule.levels {
        let src = match levels.last() {
            Some(prev) => prev.view(),
            None => clip_tokens,
        };
        let next = adapter_pool(src, schedule.level_size(j))?;
        levels.push(next);
    }
    Ok(levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn column(v: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((v.len(), 1), v.to_vec()).unwrap()
    }

    #[test]
    fn six_to_three() {
        let out = adapter_pool(column(&[1., 2., 3., 4., 5., 6.]).view(), 3).unwrap();
        assert_eq!(out, column(&[1.5, 3.5, 5.5]));
    }

    #[test]
    fn identity_when_sizes_match() {
        let x = array![[1.0, -2.0], [0.25, 3.0], [7.0, 8.0]];
        assert_eq!(adapter_pool(x.view(), 3).unwrap(), x);
    }

    #[test]
    fn size_errors() {
        let x = column(&[1., 2.]);
        assert!(matches!(adapter_pool(x.view(), 3), Err(HpsiError::Size(_))));
        assert!(matches!(adapter_pool(x.view(), 0), Err(HpsiError::Size(_))));
    }

    #[test]
    fn chained_levels_for_small_clip() {
        let s = AggregationSchedule::new(3, 1, 6, 1, 1).unwrap();
        let lv = init_aggregation_tokens(column(&[1., 2., 3., 4., 5., 6.]).view(), &s).unwrap();
        // Chained: p2 pools p1 = [1.5, 3.5, 5.5] with segments [0,1), [1,3).
        assert_eq!(lv[0], column(&[1.5, 3.5, 5.5]));
        assert_eq!(lv[1], column(&[1.5, 4.5]));
        assert_eq!(lv[2], column(&[3.0]));
    }

    #[test]
    fn row_counts_follow_schedule() {
        let s = AggregationSchedule::new(12, 4, 16, 4, 2).unwrap();
        let x = Array2::from_shape_fn((64, 2), |(r, c)| (r * 2 + c) as f64);
        let lv = init_aggregation_tokens(x.view(), &s).unwrap();
        assert_eq!(lv.iter().map(|m| m.nrows()).collect::<Vec<_>>(), vec![12, 8, 4]);
    }

    #[test]
    fn degenerate_clip_is_error() {
        let s = AggregationSchedule::new(12, 2, 1, 5, 2).unwrap();
        let x = Array2::zeros((5, 2));
        assert!(matches!(init_aggregation_tokens(x.view(), &s), Err(HpsiError::Size(_))));
    }

    #[test]
    fn adjoint_matches_inner_product() {
        let x = Array2::from_shape_fn((7, 2), |(r, c)| (r as f64 * 0.3 - c as f64).sin());
        let g = Array2::from_shape_fn((3, 2), |(r, c)| (r + 2 * c) as f64 - 1.5);
        let lhs = (&adapter_pool(x.view(), 3).unwrap() * &g).sum();
        let rhs = (&x * &adapter_pool_adjoint(g.view(), 7)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn constants_are_preserved(n in 1usize..40, m_frac in 0.0f64..1.0, v in -1e3f64..1e3) {
            let m = 1 + ((n - 1) as f64 * m_frac) as usize;
            let x = Array2::from_elem((n, 3), v);
            let out = adapter_pool(x.view(), m).unwrap();
            prop_assert!(out.iter().all(|&y| y == v));
        }
    }
}
