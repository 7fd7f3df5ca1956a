//! Masked bias-corrected loss, Adam over two learning-rate groups, a single
//! optimisation step and the pure parts of the epoch loop (batch sampling,
//! validation scoring).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand_core::RngCore;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::kv::Document;
use crate::metrics::{cpsnr, MetricConfig, SceneScore};
use crate::model::{CotMisr, Group, Mode, ModelParams};
use crate::rng;
use crate::scalar::Scalar;
use crate::scene::{frames_tensor, LrStack};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    MaskedL1,
    MaskedMse,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::MaskedL1 => "masked_l1",
            LossKind::MaskedMse => "masked_mse",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "masked_l1" => Ok(LossKind::MaskedL1),
            "masked_mse" => Ok(LossKind::MaskedMse),
            _ => Err(Error::Config(format!("unknown loss {s:?} (expected masked_l1 or masked_mse)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_encoder: f64,
    pub lr_cot: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Both rates are multiplied by this once per completed epoch.
    pub lr_decay: f64,
    /// Side of the square LR training crop; 0 trains on whole frames.
    pub patch: usize,
    /// Optimiser steps per epoch; 0 means one pass over the training scenes.
    pub steps_per_epoch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_encoder: 0.002,
            lr_cot: 0.001,
            batch_size: 8,
            epochs: 100,
            seed: 0,
            loss: LossKind::MaskedL1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr_decay: 1.0,
            patch: 0,
            steps_per_epoch: 0,
        }
    }
}

const SECTION: &str = "train";
const KEYS: &[&str] = &[
    "lr_encoder", "lr_cot", "batch_size", "epochs", "seed", "loss", "beta1", "beta2", "eps", "lr_decay", "patch",
    "steps_per_epoch",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [("lr_encoder", self.lr_encoder), ("lr_cot", self.lr_cot)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite non-negative rate, got {v}"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("Adam betas must lie in [0, 1), got {} and {}", self.beta1, self.beta2));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return bad(format!("lr_decay must be positive, got {}", self.lr_decay));
        }
        Ok(())
    }

    /// `(lr_encoder, lr_cot)` for a zero-based epoch.
    pub fn lr_at(&self, epoch: usize) -> (f64, f64) {
        let f = libm::pow(self.lr_decay, epoch as f64);
        (self.lr_encoder * f, self.lr_cot * f)
    }

    pub fn write_to(&self, doc: &mut Document) {
        let s = SECTION;
        doc.set(s, "lr_encoder", self.lr_encoder);
        doc.set(s, "lr_cot", self.lr_cot);
        doc.set(s, "batch_size", self.batch_size);
        doc.set(s, "epochs", self.epochs);
        doc.set(s, "seed", self.seed);
        doc.set(s, "loss", self.loss);
        doc.set(s, "beta1", self.beta1);
        doc.set(s, "beta2", self.beta2);
        doc.set(s, "eps", self.eps);
        doc.set(s, "lr_decay", self.lr_decay);
        doc.set(s, "patch", self.patch);
        doc.set(s, "steps_per_epoch", self.steps_per_epoch);
    }

    pub fn read_from(doc: &Document) -> Result<Self> {
        let s = SECTION;
        doc.reject_unknown(s, KEYS)?;
        let d = Self::default();
        let cfg = Self {
            lr_encoder: doc.parse_or(s, "lr_encoder", d.lr_encoder)?,
            lr_cot: doc.parse_or(s, "lr_cot", d.lr_cot)?,
            batch_size: doc.parse_or(s, "batch_size", d.batch_size)?,
            epochs: doc.parse_or(s, "epochs", d.epochs)?,
            seed: doc.parse_or(s, "seed", d.seed)?,
            loss: doc.parse_or(s, "loss", d.loss)?,
            beta1: doc.parse_or(s, "beta1", d.beta1)?,
            beta2: doc.parse_or(s, "beta2", d.beta2)?,
            eps: doc.parse_or(s, "eps", d.eps)?,
            lr_decay: doc.parse_or(s, "lr_decay", d.lr_decay)?,
            patch: doc.parse_or(s, "patch", d.patch)?,
            steps_per_epoch: doc.parse_or(s, "steps_per_epoch", d.steps_per_epoch)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Training inputs: frames `[B, K, 1, H, W]`, targets and 0/1 clear masks `[B, 1, rH, rW]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub frames: Tensor<f32>,
    pub hr: Tensor<f32>,
    pub mask: Tensor<f32>,
}

impl Batch {
    pub fn from_stacks(stacks: &[&LrStack]) -> Result<Self> {
        let frames = frames_tensor(stacks)?;
        let (mut hr, mut mask) = (Vec::new(), Vec::new());
        let mut dims = None;
        for s in stacks {
            let (Some(img), Some(m)) = (s.hr(), s.hr_mask()) else {
                return Err(Error::Config(format!("scene {} has no HR target", s.scene_id())));
            };
            if *dims.get_or_insert(img.dims()) != img.dims() {
                return Err(Error::shape("Batch", format!("HR {:?} differs within the batch", img.dims())));
            }
            hr.extend_from_slice(img.data());
            mask.extend(m.data().iter().map(|&c| if c { 1.0f32 } else { 0.0 }));
        }
        let (w, h) = dims.unwrap_or((0, 0));
        let shape = [stacks.len(), 1, h, w];
        Ok(Self { frames, hr: Tensor::new(shape, hr)?, mask: Tensor::new(shape, mask)? })
    }
}

/// Per-image bias-corrected masked loss, averaged over the batch.
///
/// For image `i` with clear set `M_i`: `b_i = mean_{M_i}(hr - sr)` and the
/// loss is `mean_{M_i} |hr - sr - b_i|` (or the squared residual).
pub fn masked_loss<T: Scalar>(tape: &mut Tape<T>, sr: Var, hr: Var, mask: &Tensor<T>, kind: LossKind) -> Result<Var> {
    let shape = tape.shape(sr).to_vec();
    if shape.len() != 4 || tape.shape(hr) != shape.as_slice() || mask.shape() != shape.as_slice() {
        return Err(Error::shape("masked_loss", format!("sr {shape:?}, hr {:?}, mask {:?}", tape.shape(hr), mask.shape())));
    }
    let (b, plane) = (shape[0], shape[1] * shape[2] * shape[3]);
    let mut inv = Vec::with_capacity(b);
    for chunk in mask.data().chunks(plane) {
        let n = chunk.iter().filter(|&&v| v != T::ZERO).count();
        if n == 0 {
            return Err(Error::EmptyMask("masked_loss"));
        }
        inv.push(T::ONE / T::from_usize(n));
    }
    let inv = tape.constant(Tensor::new([b, 1, 1, 1], inv)?);
    let m = tape.constant(mask.clone());

    let d = tape.sub(hr, sr)?;
    let d = tape.mul(d, m)?;
    let mut total = d;
    for axis in 1..4 {
        total = tape.sum_axis(total, axis)?;
    }
    let bias = tape.mul(total, inv)?;
    let centred = tape.sub(d, bias)?;
    let centred = tape.mul(centred, m)?;
    let per_pixel = match kind {
        LossKind::MaskedL1 => tape.abs(centred),
        LossKind::MaskedMse => tape.square(centred),
    };
    let mut per_image = per_pixel;
    for axis in 1..4 {
        per_image = tape.sum_axis(per_image, axis)?;
    }
    let per_image = tape.mul(per_image, inv)?;
    let s = tape.sum(per_image);
    Ok(tape.scale(s, T::ONE / T::from_usize(b)))
}

/// Adam moments for every parameter tensor, in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(params: &ModelParams<f32>) -> Self {
        let zeros: Vec<Vec<f32>> = params.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        Self { step: 0, m: zeros.clone(), v: zeros }
    }

    /// Checks the moment buffers line up with `params`.
    pub fn check(&self, params: &ModelParams<f32>) -> Result<()> {
        let ok = self.m.len() == params.len()
            && self.v.len() == params.len()
            && params.iter().zip(&self.m).zip(&self.v).all(|((p, m), v)| m.len() == p.value.numel() && v.len() == p.value.numel());
        if ok {
            Ok(())
        } else {
            Err(Error::shape("Adam", "optimizer state does not match the parameter layout"))
        }
    }

    fn update(&mut self, params: &mut ModelParams<f32>, grads: &[Vec<f32>], cfg: &TrainConfig, lr: (f64, f64)) {
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - libm::pow(cfg.beta1, t);
        let c2 = 1.0 - libm::pow(cfg.beta2, t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let rate = match p.group {
                Group::Encoder => lr.0,
                Group::Cot => lr.1,
            };
            for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g as f64;
                let mm = cfg.beta1 * *m as f64 + (1.0 - cfg.beta1) * g;
                let vv = cfg.beta2 * *v as f64 + (1.0 - cfg.beta2) * g * g;
                *m = mm as f32;
                *v = vv as f32;
                let step = (mm / c1) / (libm::sqrt(vv / c2) + cfg.eps);
                *w = (*w as f64 - rate * step) as f32;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub loss: f64,
    pub grad_norm_encoder: f64,
    pub grad_norm_cot: f64,
}

/// One forward/backward/update. `lr` is `(encoder, cot)`; `rng` drives dropout.
pub fn train_step(
    model: &CotMisr,
    params: &mut ModelParams<f32>,
    adam: &mut Adam,
    cfg: &TrainConfig,
    lr: (f64, f64),
    batch: &Batch,
    rng: &mut rng::Rng,
) -> Result<StepMetrics> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, true);
    let x = tape.constant(batch.frames.clone());
    let out = model.forward(&mut tape, &vars, x, &mut Mode::Train(rng))?;
    let hr = tape.constant(batch.hr.clone());
    let loss = masked_loss(&mut tape, out.sr, hr, &batch.mask, cfg.loss)?;
    let value = tape.value(loss).data()[0] as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss is {value} at step {}", adam.step + 1)));
    }
    tape.backward(loss)?;

    let mut norms = [0.0f64; 2];
    let mut grads = Vec::with_capacity(vars.len());
    for (p, &v) in params.iter().zip(&vars) {
        let g = tape.grad(v).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; p.value.numel()]);
        let slot = usize::from(p.group == Group::Cot);
        norms[slot] += g.iter().map(|&x| x as f64 * x as f64).sum::<f64>();
        grads.push(g);
    }
    let norms = norms.map(libm::sqrt);
    if !norms.iter().all(|n| n.is_finite()) {
        return Err(Error::NonFinite(format!("gradient norms {norms:?} at step {}", adam.step + 1)));
    }
    adam.update(params, &grads, cfg, lr);
    Ok(StepMetrics { loss: value, grad_norm_encoder: norms[0], grad_norm_cot: norms[1] })
}

/// Loss of `params` on `batch` in evaluation mode, without updating anything.
pub fn batch_loss(model: &CotMisr, params: &ModelParams<f32>, batch: &Batch, kind: LossKind) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let x = tape.constant(batch.frames.clone());
    let out = model.forward(&mut tape, &vars, x, &mut Mode::Eval)?;
    let hr = tape.constant(batch.hr.clone());
    let loss = masked_loss(&mut tape, out.sr, hr, &batch.mask, kind)?;
    Ok(tape.value(loss).data()[0] as f64)
}

/// Scene indices for each step of one epoch: a seeded shuffle read
/// cyclically in chunks of `batch_size`.
pub fn epoch_batches(n_scenes: usize, cfg: &TrainConfig, rng: &mut impl RngCore) -> Vec<Vec<usize>> {
    if n_scenes == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..n_scenes).collect();
    rng::shuffle(rng, &mut order);
    let bs = cfg.batch_size.min(n_scenes);
    let steps = if cfg.steps_per_epoch > 0 { cfg.steps_per_epoch } else { n_scenes.div_ceil(bs) };
    (0..steps).map(|s| (0..bs).map(|j| order[(s * bs + j) % n_scenes]).collect()).collect()
}

/// Builds a batch from the chosen scenes, each cut to a random `patch x patch`
/// LR window (whole frames when `patch` is 0 or not smaller than the frame).
pub fn sample_batch(scenes: &[LrStack], indices: &[usize], patch: usize, r: usize, rng: &mut impl RngCore) -> Result<Batch> {
    let mut crops = Vec::with_capacity(indices.len());
    for &i in indices {
        let s = &scenes[i];
        let (w, h) = s.dims();
        let (pw, ph) = if patch == 0 { (w, h) } else { (patch.min(w), patch.min(h)) };
        let x = rng::below(rng, (w - pw + 1) as u64) as usize;
        let y = rng::below(rng, (h - ph + 1) as u64) as usize;
        crops.push(s.crop(x, y, pw, ph, r)?);
    }
    let refs: Vec<&LrStack> = crops.iter().collect();
    Batch::from_stacks(&refs)
}

/// Raw network output for one scene, without clamping.
pub fn predict_raw(model: &CotMisr, params: &ModelParams<f32>, stack: &LrStack) -> Result<Image> {
    let sr = model.infer(params, frames_tensor(&[stack])?)?;
    if !sr.all_finite() {
        return Err(Error::NonFinite(format!("prediction for {} is not finite", stack.scene_id())));
    }
    let s = sr.shape();
    let (h, w) = (s[2], s[3]);
    Image::new(w, h, sr.into_data())
}

/// Super-resolves one scene, clamped to `[0, 1]` for storage.
pub fn predict(model: &CotMisr, params: &ModelParams<f32>, stack: &LrStack) -> Result<Image> {
    Ok(predict_raw(model, params, stack)?.map(|v| v.clamp(0.0, 1.0)))
}

/// Scores each scene's unclamped prediction against its HR target. The
/// loss ignores a global offset, so clamping first would penalise an offset
/// the metric is meant to remove.
pub fn evaluate(model: &CotMisr, params: &ModelParams<f32>, scenes: &[LrStack], metric: &MetricConfig) -> Result<Vec<SceneScore>> {
    scenes
        .iter()
        .map(|s| {
            let sr = predict_raw(model, params, s)?;
            let (Some(hr), Some(m)) = (s.hr(), s.hr_mask()) else {
                return Err(Error::Config(format!("scene {} has no HR target", s.scene_id())));
            };
            cpsnr(&sr, hr, m, metric)
        })
        .collect()
}

/// Mean cPSNR and cSSIM; NaN for an empty list.
pub fn mean_scores(scores: &[SceneScore]) -> (f64, f64) {
    let n = scores.len() as f64;
    (scores.iter().map(|s| s.cpsnr).sum::<f64>() / n, scores.iter().map(|s| s.cssim).sum::<f64>() / n)
}
