//! Per-scene score tables for the network and the bicubic baseline.

use std::path::Path;

use cotmisr_core::metrics::{cpsnr, MetricConfig, SceneScore};
use cotmisr_core::model::{CotMisr, ModelParams};
use cotmisr_core::scene::{Band, LrStack};
use cotmisr_core::train::{evaluate, mean_scores};

use crate::error::{Error, Result};

pub const METHOD_COT: &str = "cot";
pub const METHOD_BICUBIC: &str = "bicubic";
pub const MEAN_ID: &str = "mean";

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredScene {
    pub scene_id: String,
    pub band: Band,
    pub score: SceneScore,
}

/// Network scores, in the order of `scenes`.
pub fn score_model(model: &CotMisr, params: &ModelParams<f32>, scenes: &[LrStack], metric: &MetricConfig) -> Result<Vec<ScoredScene>> {
    let scores = evaluate(model, params, scenes, metric)?;
    Ok(scenes.iter().zip(scores).map(|(s, score)| ScoredScene { scene_id: s.scene_id().into(), band: s.band(), score }).collect())
}

/// Bicubic upscaling of each scene's clearest frame.
pub fn score_bicubic(scenes: &[LrStack], r: usize, metric: &MetricConfig) -> Result<Vec<ScoredScene>> {
    scenes
        .iter()
        .map(|s| {
            let (Some(hr), Some(m)) = (s.hr(), s.hr_mask()) else {
                return Err(Error::Config(format!("scene {} has no HR target", s.scene_id())));
            };
            let sr = s.bicubic_baseline(r)?.map(|v| v.clamp(0.0, 1.0));
            Ok(ScoredScene { scene_id: s.scene_id().into(), band: s.band(), score: cpsnr(&sr, hr, m, metric)? })
        })
        .collect()
}

/// `(label, mean cPSNR, mean cSSIM)` for each band present, then `ALL`.
pub fn band_means(rows: &[ScoredScene]) -> Vec<(String, f64, f64)> {
    let mut out = Vec::new();
    for band in Band::ALL {
        let scores: Vec<SceneScore> = rows.iter().filter(|r| r.band == band).map(|r| r.score).collect();
        if !scores.is_empty() {
            let (p, s) = mean_scores(&scores);
            out.push((band.name().to_string(), p, s));
        }
    }
    let all: Vec<SceneScore> = rows.iter().map(|r| r.score).collect();
    if !all.is_empty() {
        let (p, s) = mean_scores(&all);
        out.push(("ALL".to_string(), p, s));
    }
    out
}

pub const REPORT_HEADER: [&str; 8] = ["method", "scene_id", "band", "cpsnr", "cssim", "shift_u", "shift_v", "bias"];

/// Writes one row per scene and method followed by the per-band means.
pub fn write_report(path: &Path, sections: &[(&str, &[ScoredScene])]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_report_to(file, sections)
}

pub fn write_report_to(out: impl std::io::Write, sections: &[(&str, &[ScoredScene])]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for (method, rows) in sections {
        for r in *rows {
            let s = &r.score;
            w.write_record([
                method.to_string(),
                r.scene_id.clone(),
                r.band.to_string(),
                s.cpsnr.to_string(),
                s.cssim.to_string(),
                s.best_shift.0.to_string(),
                s.best_shift.1.to_string(),
                s.bias.to_string(),
            ])?;
        }
        for (label, p, s) in band_means(rows) {
            w.write_record([method.to_string(), MEAN_ID.into(), label, p.to_string(), s.to_string(), String::new(), String::new(), String::new()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<report>", e))
}
