//! Static HPSI inspection: sequence layout, per-band masks, position IDs and
//! the compression ratio for a given configuration and stream.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::EngineConfig;
use crate::hpsi::{
    build_layout, build_mask, build_position_ids, compression_ratio, LayoutDump, MaskDump, MaskOptions,
    PositionDump, SequenceLayout,
};
use crate::stream::{ClipStream, IngestMode};

use super::generate::write_json;
use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayoutMaskDump {
    pub layout: LayoutDump,
    pub mask_options: MaskOptions,
    pub masks: Vec<MaskDump>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InspectDumps {
    pub layout_mask: LayoutMaskDump,
    pub positions: PositionDump,
    pub compression_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InspectSummary {
    pub clips: usize,
    pub sequence_len: usize,
    pub compression_ratio: f64,
    pub layout_mask_path: PathBuf,
    pub positions_path: PathBuf,
}

fn layout_for(cfg: &EngineConfig, n_clips: usize) -> Result<SequenceLayout, EvalError> {
    let per_clip = cfg.schedule.visual_tokens_per_clip();
    Ok(build_layout(
        cfg.text_pre_len,
        &vec![per_clip; n_clips],
        &cfg.schedule,
        cfg.text_post_len,
    )?)
}

/// Builds every dump for `n_clips` full-length clips under `cfg`.
pub fn inspect_dumps(cfg: &EngineConfig, n_clips: usize) -> Result<InspectDumps, EvalError> {
    cfg.validate()?;
    let layout = layout_for(cfg, n_clips)?;
    let mut masks = Vec::with_capacity(cfg.schedule.levels);
    for band in 1..=cfg.schedule.levels {
        let layers: Vec<usize> = (0..cfg.schedule.layers)
            .filter(|&l| cfg.schedule.active_level(l) == band)
            .collect();
        if layers.is_empty() {
            continue;
        }
        let mask = build_mask(&layout, &vec![band; n_clips], cfg.mask)?;
        masks.push(MaskDump::from_mask(&mask, band, layers));
    }
    let positions = build_position_ids(&layout, &cfg.schedule, cfg.position, (cfg.grid[0], cfg.grid[1]))?;
    Ok(InspectDumps {
        layout_mask: LayoutMaskDump {
            layout: LayoutDump::from(&layout),
            mask_options: cfg.mask,
            masks,
        },
        positions: PositionDump::from(&positions),
        compression_ratio: compression_ratio(&cfg.schedule),
    })
}

/// Checks `stream` against `cfg`, then writes `layout_mask.json` and
/// `positions.json` into `out_dir`.
pub fn hpsi_inspect(cfg: &EngineConfig, stream: &ClipStream, out_dir: &Path) -> Result<InspectSummary, EvalError> {
    if stream.mode() != IngestMode::Feature {
        return Err(EvalError::Dataset("inspection needs a feature-mode stream".into()));
    }
    let s = &cfg.schedule;
    if let Some((tpf, d)) = stream.frame_shape() {
        if tpf != s.tokens_per_frame || d != s.d {
            return Err(EvalError::Dataset(format!(
                "stream frames are {tpf}x{d}, configuration expects {}x{}",
                s.tokens_per_frame, s.d
            )));
        }
    }
    if let Some(c) = stream.clips().iter().find(|c| c.frame_count != s.clip_frames) {
        return Err(EvalError::Dataset(format!(
            "clip {} has {} frames, configuration expects {}",
            c.index, c.frame_count, s.clip_frames
        )));
    }
    let dumps = inspect_dumps(cfg, stream.len())?;
    std::fs::create_dir_all(out_dir)?;
    let layout_mask_path = out_dir.join("layout_mask.json");
    let positions_path = out_dir.join("positions.json");
    write_json(&layout_mask_path, &dumps.layout_mask)?;
    write_json(&positions_path, &dumps.positions)?;
    Ok(InspectSummary {
        clips: stream.len(),
        sequence_len: dumps.layout_mask.layout.len,
        compression_ratio: dumps.compression_ratio,
        layout_mask_path,
        positions_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::generate_feature_stream;

    #[test]
    fn one_mask_per_band() {
        let cfg = EngineConfig::default();
        let d = inspect_dumps(&cfg, 2).unwrap();
        let bands: Vec<usize> = d.layout_mask.masks.iter().map(|m| m.band).collect();
        assert_eq!(bands, vec![1, 2, 3]);
        let layers: Vec<usize> = d.layout_mask.masks.iter().flat_map(|m| m.layers.clone()).collect();
        assert_eq!(layers, (0..12).collect::<Vec<_>>());
        assert_eq!(d.compression_ratio, 0.0625);
    }

    #[test]
    fn writes_files_and_checks_shape() {
        let cfg = EngineConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let stream = generate_feature_stream(1, 2, 16, 4, 16, 2.0).unwrap();
        let s = hpsi_inspect(&cfg, &stream, dir.path()).unwrap();
        assert!(s.layout_mask_path.exists() && s.positions_path.exists());
        let bad = generate_feature_stream(1, 2, 8, 4, 16, 2.0).unwrap();
        assert!(hpsi_inspect(&cfg, &bad, dir.path()).is_err());
    }
}
