//! TOML engine configuration: aggregation schedule, mask switches, position
//! parameters and controller constants.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::atdm::AtdmConfig;
use crate::hpsi::{AggregationSchedule, MaskOptions, PositionParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub schedule: AggregationSchedule,
    pub mask: MaskOptions,
    pub position: PositionParams,
    /// Pre-merge spatial grid `[H, W]` of one frame.
    pub grid: [usize; 2],
    pub text_pre_len: usize,
    pub text_post_len: usize,
    pub atdm: AtdmConfig,
}

impl Default for EngineConfig {
    /// Sixteen-frame clips of 4 tokens each, with the final level holding one frame's tokens.
    fn default() -> Self {
        Self {
            schedule: AggregationSchedule {
                layers: 12,
                n_vc: 4,
                clip_frames: 16,
                tokens_per_frame: 4,
                d: 16,
                levels: 3,
            },
            mask: MaskOptions::default(),
            position: PositionParams::default(),
            grid: [4, 4],
            text_pre_len: 2,
            text_post_len: 2,
            atdm: AtdmConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: EngineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.schedule
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.atdm
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let s = self.position.s_merge;
        let [h, w] = self.grid;
        if s == 0 || h % s != 0 || w % s != 0 {
            return Err(ConfigError::Invalid(format!(
                "grid {h}x{w} is not divisible by merge size {s}"
            )));
        }
        if (h / s) * (w / s) != self.schedule.tokens_per_frame {
            return Err(ConfigError::Invalid(format!(
                "grid {h}x{w} merged by {s} gives {} cells, but frames carry {} tokens",
                (h / s) * (w / s),
                self.schedule.tokens_per_frame
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        EngineConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = EngineConfig::from_toml(
            r#"
            [schedule]
            layers = 6
            n_vc = 4
            clip_frames = 32
            tokens_per_frame = 4
            d = 8

            [mask]
            first_frame_anchor = false

            [atdm]
            w_par = 3
            "#,
            "inline",
        )
        .unwrap();
        assert_eq!(cfg.schedule.levels, 3);
        assert_eq!(cfg.schedule.clip_frames, 32);
        assert!(!cfg.mask.first_frame_anchor);
        assert!(cfg.mask.same_level_context);
        assert_eq!(cfg.atdm.w_par, 3);
        assert_eq!(cfg.atdm.theta_ans, 0.85);
    }

    #[test]
    fn mismatched_grid_is_rejected() {
        let r = EngineConfig::from_toml("grid = [6, 4]", "inline");
        assert!(matches!(r, Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn zero_window_is_rejected() {
        let r = EngineConfig::from_toml("[atdm]\nw_par = 0", "inline");
        assert!(matches!(r, Err(ConfigError::Invalid(_))));
    }
}
