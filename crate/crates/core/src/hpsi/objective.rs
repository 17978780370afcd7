//! Progressive integration objective over per-layer aggregation tokens.
//!
//! For every layer and present level `j`:
//!
//! ```text
//! || p_j - pool(v, n_j) ||  +  || p_j - pool(p_{j-1}, n_j) ||      (p_0 = v)
//! ```
//!
//! with Frobenius norms. Pooling the reference to `n_j` rows keeps both
//! terms well-typed for every level.

use ndarray::{Array2, ArrayView2};

use super::{adapter_pool, adapter_pool_adjoint, AggregationSchedule, HpsiError};

/// Aggregation tokens present at one layer, level 1 first.
pub type LayerAggregates = Vec<Array2<f64>>;

fn check_shapes(
    per_layer: &[LayerAggregates],
    v: ArrayView2<f64>,
    schedule: &AggregationSchedule,
) -> Result<(), HpsiError> {
    if per_layer.len() != schedule.layers {
        return Err(HpsiError::Shape(format!(
            "{} layers of aggregates for a {}-layer schedule",
            per_layer.len(),
            schedule.layers
        )));
    }
    if v.nrows() < schedule.level_size(1) {
        return Err(HpsiError::Shape(format!(
            "{} clip tokens cannot be pooled to {} rows",
            v.nrows(),
            schedule.level_size(1)
        )));
    }
    for (l, levels) in per_layer.iter().enumerate() {
        if levels.len() > schedule.levels {
            return Err(HpsiError::Shape(format!(
                "layer {l} carries {} levels, schedule has {}",
                levels.len(),
                schedule.levels
            )));
        }
        for (j, p) in levels.iter().enumerate() {
            let want = (schedule.level_size(j + 1), v.ncols());
            if p.dim() != want {
                return Err(HpsiError::Shape(format!(
                    "layer {l} level {}: shape {:?}, expected {want:?}",
                    j + 1,
                    p.dim()
                )));
            }
        }
    }
    Ok(())
}

fn frob(m: &Array2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Pooled clip targets, one per level.
fn targets(v: ArrayView2<f64>, schedule: &AggregationSchedule) -> Result<Vec<Array2<f64>>, HpsiError> {
    (1..=schedule.levels)
        .map(|j| adapter_pool(v, schedule.level_size(j)))
        .collect()
}

pub fn integration_loss(
    per_layer: &[LayerAggregates],
    v: ArrayView2<f64>,
    schedule: &AggregationSchedule,
) -> Result<f64, HpsiError> {
    check_shapes(per_layer, v, schedule)?;
    let tgt = targets(v, schedule)?;
    let mut total = 0.0;
    for levels in per_layer {
        for (j, p) in levels.iter().enumerate() {
            total += frob(&(p - &tgt[j]));
            let prev = if j == 0 {
                tgt[0].clone()
            } else {
                adapter_pool(levels[j - 1].view(), p.nrows())?
            };
            total += frob(&(p - &prev));
        }
    }
    Ok(total)
}

/// Gradient of [`integration_loss`] with respect to every aggregation matrix.
///
/// A norm that is exactly zero contributes the zero subgradient.
pub fn integration_loss_grad(
    per_layer: &[LayerAggregates],
    v: ArrayView2<f64>,
    schedule: &AggregationSchedule,
) -> Result<Vec<LayerAggregates>, HpsiError> {
    check_shapes(per_layer, v, schedule)?;
    let tgt = targets(v, schedule)?;
    let unit = |e: Array2<f64>| {
        let n = frob(&e);
        if n > 0.0 {
            e / n
        } else {
            Array2::zeros(e.raw_dim())
        }
    };
    let mut grads = Vec::with_capacity(per_layer.len());
    for levels in per_layer {
        let mut g: Vec<Array2<f64>> = levels.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        for (j, p) in levels.iter().enumerate() {
            g[j] += &unit(p - &tgt[j]);
            if j == 0 {
                g[0] += &unit(p - &tgt[0]);
            } else {
                let prev = &levels[j - 1];
                let u = unit(p - &adapter_pool(prev.view(), p.nrows())?);
                g[j] += &u;
                g[j - 1] -= &adapter_pool_adjoint(u.view(), prev.nrows());
            }
        }
        grads.push(g);
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hpsi::init_aggregation_tokens;

    fn schedule() -> AggregationSchedule {
        AggregationSchedule::new(3, 1, 3, 2, 2).unwrap()
    }

    #[test]
    fn constant_tokens_give_zero_loss_and_gradient() {
        let s = schedule();
        let v = Array2::from_elem((6, 2), 0.7);
        let layers: Vec<LayerAggregates> = (0..3)
            .map(|_| s.level_sizes().iter().map(|&n| Array2::from_elem((n, 2), 0.7)).collect())
            .collect();
        assert_eq!(integration_loss(&layers, v.view(), &s).unwrap(), 0.0);
        let g = integration_loss_grad(&layers, v.view(), &s).unwrap();
        assert!(g.iter().flatten().all(|m| m.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn pooled_targets_zero_first_term_only() {
        let s = schedule();
        let v = Array2::from_shape_fn((6, 2), |(r, c)| (r * r) as f64 + c as f64);
        let direct: Vec<Array2<f64>> = s
            .level_sizes()
            .iter()
            .map(|&n| adapter_pool(v.view(), n).unwrap())
            .collect();
        let layers = vec![direct.clone(), direct.clone(), direct];
        let loss = integration_loss(&layers, v.view(), &s).unwrap();
        assert!(loss > 0.0);
    }

    #[test]
    fn chained_init_has_zero_smoothness() {
        let s = schedule();
        let v = Array2::from_shape_fn((6, 2), |(r, c)| (r as f64).sin() + c as f64);
        let chained = init_aggregation_tokens(v.view(), &s).unwrap();
        let mut loss = 0.0;
        // smoothness term vanishes for chained pooling; only target terms remain
        for p in &chained {
            loss += frob(&(p - &adapter_pool(v.view(), p.nrows()).unwrap()));
        }
        let total = integration_loss(&[chained.clone(), chained.clone(), chained], v.view(), &s).unwrap();
        assert!((total - 3.0 * loss).abs() < 1e-12);
    }

    #[test]
    fn deviation_in_top_level_is_local() {
        let s = schedule();
        let v = Array2::from_elem((6, 2), 1.0);
        let mut layers: Vec<LayerAggregates> = (0..3)
            .map(|_| s.level_sizes().iter().map(|&n| Array2::from_elem((n, 2), 1.0)).collect())
            .collect();
        layers[1][2][[0, 1]] = 2.5;
        let g = integration_loss_grad(&layers, v.view(), &s).unwrap();
        for (l, lv) in g.iter().enumerate() {
            for (j, m) in lv.iter().enumerate() {
                let nonzero = m.iter().any(|&x| x != 0.0);
                assert_eq!(nonzero, l == 1 && j >= 1, "layer {l} level {}", j + 1);
            }
        }
        // the deviating entry itself carries gradient
        assert!(g[1][2][[0, 1]] > 0.0);
        assert_eq!(g[1][2][[0, 0]], 0.0);
    }

    #[test]
    fn wrong_layer_count_is_shape_error() {
        let s = schedule();
        let v = Array2::zeros((6, 2));
        assert!(matches!(
            integration_loss(&[vec![]], v.view(), &s),
            Err(HpsiError::Shape(_))
        ));
    }
}
