//! The epoch loop: data preparation, training, validation, checkpoints and
//! the history file.

use std::fs;
use std::path::{Path, PathBuf};

use cotmisr_core::model::{CotMisr, ModelParams};
use cotmisr_core::rng;
use cotmisr_core::scene::{pad_frames, preprocess, split, LrStack, SplitManifest};
use cotmisr_core::train::{epoch_batches, mean_scores, sample_batch, train_step, Adam};

use crate::checkpoint::{self, TrainState};
use crate::dataset;
use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::report::{self, ScoredScene};

pub const MODEL_FILE: &str = "model.ckpt";
pub const BEST_FILE: &str = "best.ckpt";
pub const STATE_FILE: &str = "train_state.bin";
pub const HISTORY_FILE: &str = "history.csv";
pub const SPLIT_FILE: &str = "split.txt";
pub const REPORT_FILE: &str = "report.csv";
pub const CONFIG_FILE: &str = "experiment.txt";

pub const HISTORY_HEADER: [&str; 6] = ["epoch", "train_loss", "val_cpsnr", "val_cssim", "lr_encoder", "lr_cot"];

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_cpsnr: f64,
    pub val_cssim: f64,
    pub lr_encoder: f64,
    pub lr_cot: f64,
}

impl EpochRecord {
    fn fields(&self) -> [String; 6] {
        [
            self.epoch.to_string(),
            self.train_loss.to_string(),
            self.val_cpsnr.to_string(),
            self.val_cssim.to_string(),
            self.lr_encoder.to_string(),
            self.lr_cot.to_string(),
        ]
    }
}

/// Drops cloudy frames, then pads or trims to `k`. Scenes must carry HR
/// targets `r` times the LR extents.
pub fn prepare_scene(stack: &LrStack, k: usize, r: usize, min_clearance: f64, need_hr: bool) -> Result<LrStack> {
    let s = pad_frames(&preprocess(stack, min_clearance), k)?;
    let (w, h) = s.dims();
    match s.hr() {
        Some(hr) if hr.dims() != (w * r, h * r) => {
            Err(Error::data(s.scene_id(), format!("HR {:?} is not {r}x the LR {w}x{h}", hr.dims())))
        }
        None if need_hr => Err(Error::data(s.scene_id(), "no HR target")),
        _ => Ok(s),
    }
}

pub fn load_prepared(root: &Path, exp: &ExperimentConfig) -> Result<Vec<LrStack>> {
    dataset::load_dataset(root, exp.data.band)?
        .iter()
        .map(|s| prepare_scene(s, exp.model.k, exp.model.upscale, exp.data.min_clearance, true))
        .collect()
}

/// Picks the scenes named in `ids`, in that order.
pub fn select(scenes: &[LrStack], ids: &[String]) -> Result<Vec<LrStack>> {
    ids.iter()
        .map(|id| {
            scenes
                .iter()
                .find(|s| s.scene_id() == id)
                .cloned()
                .ok_or_else(|| Error::data(id, "scene listed in the split manifest is missing from the data"))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub history: Vec<EpochRecord>,
    pub report_cot: Vec<ScoredScene>,
    pub report_bicubic: Vec<ScoredScene>,
    pub out: PathBuf,
}

fn write_history(path: &Path, rows: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Other(format!("{}: {e}", path.display())))?;
    w.write_record(HISTORY_HEADER)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::data(path, e.to_string()))?;
    let bad = |e: String| Error::data(path, e);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let f = |i: usize| -> Result<f64> { rec.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| bad(format!("bad field {i}"))) };
        out.push(EpochRecord {
            epoch: rec.get(0).and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad epoch".into()))?,
            train_loss: f(1)?,
            val_cpsnr: f(2)?,
            val_cssim: f(3)?,
            lr_encoder: f(4)?,
            lr_cot: f(5)?,
        });
    }
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains `exp` into `out`. With `resume`, continues from the checkpoint and
/// state left by an earlier run of the same experiment; the result is
/// identical to an uninterrupted run.
pub fn fit(exp: &ExperimentConfig, out: &Path, resume: bool, progress: &mut dyn FnMut(&EpochRecord)) -> Result<FitSummary> {
    exp.validate()?;
    let root = exp.data_root()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let scenes = load_prepared(&root, exp)?;
    if scenes.len() < 2 {
        return Err(Error::data(&root, "training needs at least two scenes (one for validation)"));
    }
    let ids: Vec<String> = scenes.iter().map(|s| s.scene_id().to_string()).collect();
    let manifest: SplitManifest = split(&ids, exp.train.seed, exp.data.split_ratio)?;
    let train = select(&scenes, &manifest.train)?;
    let val = select(&scenes, &manifest.val)?;
    write_text(&out.join(SPLIT_FILE), &manifest.to_text())?;
    write_text(&out.join(CONFIG_FILE), &exp.to_text())?;

    let model = CotMisr::new(exp.model.clone())?;
    let tc = &exp.train;
    let (mut params, mut adam, mut history, mut best): (ModelParams<f32>, Adam, Vec<EpochRecord>, f64);
    let state_path = out.join(STATE_FILE);
    if resume && state_path.exists() {
        let (m, p) = checkpoint::load_checkpoint(&out.join(MODEL_FILE))?;
        if m.config() != &exp.model {
            return Err(Error::Config("checkpoint in the output directory was trained with a different model config".into()));
        }
        let state = checkpoint::load_state(&state_path)?;
        state.adam.check(&p)?;
        history = read_history(&out.join(HISTORY_FILE))?;
        if history.len() as u64 != state.next_epoch {
            return Err(Error::data(out, "history and training state disagree on the epoch count"));
        }
        (params, adam, best) = (p, state.adam, state.best_cpsnr);
    } else {
        params = model.init_params(&mut rng::stream(tc.seed, rng::STREAM_INIT));
        adam = Adam::new(&params);
        history = Vec::new();
        best = f64::NEG_INFINITY;
    }

    for epoch in history.len()..tc.epochs {
        let mut r = rng::stream(tc.seed, rng::STREAM_EPOCH + epoch as u64);
        let lr = tc.lr_at(epoch);
        let mut losses = Vec::new();
        for idx in epoch_batches(train.len(), tc, &mut r) {
            let batch = sample_batch(&train, &idx, tc.patch, exp.model.upscale, &mut r)?;
            losses.push(train_step(&model, &mut params, &mut adam, tc, lr, &batch, &mut r)?.loss);
        }
        let scores: Vec<_> = report::score_model(&model, &params, &val, &exp.metrics)?.into_iter().map(|s| s.score).collect();
        let (val_cpsnr, val_cssim) = mean_scores(&scores);
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: losses.iter().sum::<f64>() / losses.len().max(1) as f64,
            val_cpsnr,
            val_cssim,
            lr_encoder: lr.0,
            lr_cot: lr.1,
        };
        progress(&record);
        history.push(record);

        checkpoint::save_checkpoint(&out.join(MODEL_FILE), &exp.model, &params)?;
        if val_cpsnr > best {
            best = val_cpsnr;
            checkpoint::save_checkpoint(&out.join(BEST_FILE), &exp.model, &params)?;
        }
        write_history(&out.join(HISTORY_FILE), &history)?;
        checkpoint::save_state(&state_path, &TrainState { next_epoch: history.len() as u64, best_cpsnr: best, adam: adam.clone() })?;
    }
    if history.is_empty() {
        // Zero epochs still leave a usable, evaluable checkpoint.
        checkpoint::save_checkpoint(&out.join(MODEL_FILE), &exp.model, &params)?;
        write_history(&out.join(HISTORY_FILE), &history)?;
    }

    let report_cot = report::score_model(&model, &params, &val, &exp.metrics)?;
    let report_bicubic = report::score_bicubic(&val, exp.model.upscale, &exp.metrics)?;
    report::write_report(&out.join(REPORT_FILE), &[(report::METHOD_COT, &report_cot), (report::METHOD_BICUBIC, &report_bicubic)])?;
    Ok(FitSummary { history, report_cot, report_bicubic, out: out.to_path_buf() })
}
