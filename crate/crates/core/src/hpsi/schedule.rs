use serde::{Deserialize, Serialize};

use super::HpsiError;

/// Structural parameters shared by layout, mask, decoder and objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationSchedule {
    /// Decoder depth `L`; must be a positive multiple of 3.
    pub layers: usize,
    /// Row count of the final aggregation level per clip.
    pub n_vc: usize,
    pub clip_frames: usize,
    pub tokens_per_frame: usize,
    pub d: usize,
    /// Number of materialised levels (3 normally; 1 or 2 for level-removal ablations).
    #[serde(default = "default_levels")]
    pub levels: usize,
}

fn default_levels() -> usize {
    3
}

impl AggregationSchedule {
    pub fn new(
        layers: usize,
        n_vc: usize,
        clip_frames: usize,
        tokens_per_frame: usize,
        d: usize,
    ) -> Result<Self, HpsiError> {
        let s = Self {
            layers,
            n_vc,
            clip_frames,
            tokens_per_frame,
            d,
            levels: 3,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_levels(mut self, levels: usize) -> Result<Self, HpsiError> {
        self.levels = levels;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), HpsiError> {
        if self.layers == 0 || !self.layers.is_multiple_of(3) {
            return Err(HpsiError::Config(format!(
                "layer count {} must be a positive multiple of 3",
                self.layers
            )));
        }
        if self.n_vc == 0 {
            return Err(HpsiError::Config("N_vc must be at least 1".into()));
        }
        if self.clip_frames == 0 || self.tokens_per_frame == 0 || self.d == 0 {
            return Err(HpsiError::Config(
                "clip_frames, tokens_per_frame and d must be positive".into(),
            ));
        }
        if !(1..=3).contains(&self.levels) {
            return Err(HpsiError::Config(format!(
                "levels must be 1, 2 or 3, got {}",
                self.levels
            )));
        }
        Ok(())
    }

    /// Rows of level `j` (1-based): `(4 - j) * N_vc`.
    pub fn level_size(&self, level: usize) -> usize {
        assert!((1..=3).contains(&level), "level {level} out of range");
        (4 - level) * self.n_vc
    }

    /// Sizes of the materialised levels, level 1 first.
    pub fn level_sizes(&self) -> Vec<usize> {
        (1..=self.levels).map(|j| self.level_size(j)).collect()
    }

    /// Aggregation rows per clip over all materialised levels.
    pub fn aggregation_rows(&self) -> usize {
        self.level_sizes().iter().sum()
    }

    pub fn top_level(&self) -> usize {
        self.levels
    }

    /// Layers at which a new level is spliced in: `{0, L/3, 2L/3}`, truncated to `levels`.
    pub fn insertion_layers(&self) -> Vec<usize> {
        (0..self.levels).map(|j| j * self.layers / 3).collect()
    }

    /// Highest level visible at `layer`, respecting the level-removal ablation.
    pub fn active_level(&self, layer: usize) -> usize {
        insertion_level(layer, self.layers).min(self.levels)
    }

    /// Level inserted at `layer`, if any.
    pub fn inserted_at(&self, layer: usize) -> Option<usize> {
        self.insertion_layers()
            .iter()
            .position(|&l| l == layer)
            .map(|j| j + 1)
    }

    pub fn visual_tokens_per_clip(&self) -> usize {
        self.clip_frames * self.tokens_per_frame
    }
}

/// `m(l) = 1 + floor(3l / L)`, clamped to 3.
pub fn insertion_level(layer: usize, layers: usize) -> usize {
    (1 + 3 * layer / layers).min(3)
}

/// Fraction of a clip's raw visual tokens that text reads at the top band
/// through the final-level summaries (first-frame anchors not counted).
pub fn compression_ratio(schedule: &AggregationSchedule) -> f64 {
    schedule.level_size(schedule.top_level()) as f64 / schedule.visual_tokens_per_clip() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_sizes_are_three_two_one() {
        for n in 1..=4 {
            let s = AggregationSchedule::new(12, n, 16, 4, 8).unwrap();
            assert_eq!(s.level_sizes(), vec![3 * n, 2 * n, n]);
            assert_eq!(s.aggregation_rows(), 6 * n);
        }
    }

    #[test]
    fn insertion_level_table() {
        assert_eq!(insertion_level(0, 12), 1);
        assert_eq!(insertion_level(4, 12), 2);
        assert_eq!(insertion_level(11, 12), 3);
        assert_eq!(insertion_level(12, 12), 3);
    }

    #[test]
    fn insertion_layers_are_thirds() {
        let s = AggregationSchedule::new(12, 1, 16, 4, 8).unwrap();
        assert_eq!(s.insertion_layers(), vec![0, 4, 8]);
        assert_eq!(s.inserted_at(4), Some(2));
        assert_eq!(s.inserted_at(5), None);
        let s2 = s.with_levels(2).unwrap();
        assert_eq!(s2.insertion_layers(), vec![0, 4]);
        assert_eq!(s2.active_level(11), 2);
    }

    #[test]
    fn rejects_bad_depth() {
        assert!(AggregationSchedule::new(10, 1, 16, 4, 8).is_err());
        assert!(AggregationSchedule::new(0, 1, 16, 4, 8).is_err());
        assert!(AggregationSchedule::new(12, 0, 16, 4, 8).is_err());
    }

    #[test]
    fn budget_ratios() {
        let s = AggregationSchedule::new(12, 4, 16, 4, 8).unwrap();
        assert_eq!(compression_ratio(&s), 0.0625);
        let live = AggregationSchedule::new(12, 4, 32, 4, 8).unwrap();
        assert_eq!(compression_ratio(&live), 0.03125);
        let none = AggregationSchedule::new(12, 64, 16, 4, 8).unwrap();
        assert_eq!(compression_ratio(&none), 1.0);
    }
}
