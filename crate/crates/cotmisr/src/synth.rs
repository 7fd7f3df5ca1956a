//! Procedural scenes for desk-scale experiments.

use std::path::Path;

use cotmisr_core::image::{Image, Mask};
use cotmisr_core::kv::Document;
use cotmisr_core::rng::{self, Rng};
use cotmisr_core::scene::{Band, LrStack};

use crate::dataset;
use crate::error::{Error, Result};
use crate::png;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_scenes: usize,
    pub hr_size: usize,
    pub upscale: usize,
    pub frames: usize,
    /// Largest per-axis frame offset, in HR pixels.
    pub shift_px: usize,
    pub noise_sigma: f64,
    /// Chance that an LR frame carries a cloud.
    pub cloud_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { n_scenes: 20, hr_size: 96, upscale: 3, frames: 9, shift_px: 2, noise_sigma: 0.01, cloud_prob: 0.2, seed: 0 }
    }
}

const SECTION: &str = "synth";
const KEYS: &[&str] = &["n_scenes", "hr_size", "upscale", "frames", "shift_px", "noise_sigma", "cloud_prob", "seed"];

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_scenes == 0 || self.frames == 0 || self.upscale == 0 {
            return bad("n_scenes, frames and upscale must be at least 1".into());
        }
        if self.hr_size == 0 || !self.hr_size.is_multiple_of(self.upscale) {
            return bad(format!("hr_size {} must be a positive multiple of upscale {}", self.hr_size, self.upscale));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be non-negative, got {}", self.noise_sigma));
        }
        if !(0.0..=1.0).contains(&self.cloud_prob) {
            return bad(format!("cloud_prob must lie in [0, 1], got {}", self.cloud_prob));
        }
        Ok(())
    }

    pub fn write_to(&self, doc: &mut Document) {
        let s = SECTION;
        doc.set(s, "n_scenes", self.n_scenes);
        doc.set(s, "hr_size", self.hr_size);
        doc.set(s, "upscale", self.upscale);
        doc.set(s, "frames", self.frames);
        doc.set(s, "shift_px", self.shift_px);
        doc.set(s, "noise_sigma", self.noise_sigma);
        doc.set(s, "cloud_prob", self.cloud_prob);
        doc.set(s, "seed", self.seed);
    }

    pub fn read_from(doc: &Document) -> Result<Self> {
        let s = SECTION;
        doc.reject_unknown(s, KEYS)?;
        let d = Self::default();
        let cfg = Self {
            n_scenes: doc.parse_or(s, "n_scenes", d.n_scenes)?,
            hr_size: doc.parse_or(s, "hr_size", d.hr_size)?,
            upscale: doc.parse_or(s, "upscale", d.upscale)?,
            frames: doc.parse_or(s, "frames", d.frames)?,
            shift_px: doc.parse_or(s, "shift_px", d.shift_px)?,
            noise_sigma: doc.parse_or(s, "noise_sigma", d.noise_sigma)?,
            cloud_prob: doc.parse_or(s, "cloud_prob", d.cloud_prob)?,
            seed: doc.parse_or(s, "seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn snap(v: f64) -> f32 {
    png::dequantize(png::quantize(v as f32))
}

/// Sinusoid mixture plus Gaussian blobs, stretched to `[0.05, 0.95]`.
fn texture(n: usize, rng: &mut Rng) -> Image {
    let waves: Vec<[f64; 4]> = (0..4)
        .map(|_| {
            let period = rng::uniform(rng, 4.0, 24.0);
            let angle = rng::uniform(rng, 0.0, std::f64::consts::PI);
            let k = std::f64::consts::TAU / period;
            [k * angle.cos(), k * angle.sin(), rng::uniform(rng, 0.0, std::f64::consts::TAU), rng::uniform(rng, 0.05, 0.15)]
        })
        .collect();
    let blobs: Vec<[f64; 4]> = (0..6)
        .map(|_| {
            let sign = if rng::unit(rng) < 0.5 { -1.0 } else { 1.0 };
            [rng::uniform(rng, 0.0, n as f64), rng::uniform(rng, 0.0, n as f64), rng::uniform(rng, 2.0, 10.0), sign * rng::uniform(rng, 0.1, 0.3)]
        })
        .collect();
    let raw: Vec<f64> = (0..n * n)
        .map(|i| {
            let (x, y) = ((i % n) as f64, (i / n) as f64);
            let w: f64 = waves.iter().map(|[kx, ky, ph, a]| a * (kx * x + ky * y + ph).sin()).sum();
            let b: f64 = blobs
                .iter()
                .map(|[cx, cy, s, a]| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp())
                .sum();
            w + b
        })
        .collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    Image::new(n, n, raw.iter().map(|v| snap(0.05 + 0.9 * (v - lo) / span)).collect()).expect("square buffer")
}

/// Box average of `r x r` HR blocks offset by `(dx, dy)`, clamped at the edges.
pub fn box_downsample(hr: &Image, r: usize, dx: isize, dy: isize) -> Vec<f64> {
    let (w, h) = (hr.width() / r, hr.height() / r);
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut out = Vec::with_capacity(w * h);
    for j in 0..h {
        for i in 0..w {
            let mut acc = 0.0;
            for b in 0..r {
                for a in 0..r {
                    let x = clamp((r * i + a) as isize + dx, hr.width());
                    let y = clamp((r * j + b) as isize + dy, hr.height());
                    acc += hr.get(x, y) as f64;
                }
            }
            out.push(acc / (r * r) as f64);
        }
    }
    out
}

fn cloud(lr: usize, values: &mut [f64], mask: &mut Mask, rng: &mut Rng) {
    for _ in 0..1 + rng::below(rng, 2) {
        let (cx, cy) = (rng::uniform(rng, 0.0, lr as f64), rng::uniform(rng, 0.0, lr as f64));
        let (rx, ry) = (rng::uniform(rng, 2.0, lr as f64 / 4.0 + 2.0), rng::uniform(rng, 2.0, lr as f64 / 4.0 + 2.0));
        for y in 0..lr {
            for x in 0..lr {
                let d = ((x as f64 - cx) / rx).powi(2) + ((y as f64 - cy) / ry).powi(2);
                if d <= 1.0 {
                    values[y * lr + x] = 0.9 + 0.05 * (1.0 - d);
                    mask.set(x, y, false);
                }
            }
        }
    }
}

/// Generates every scene in memory. All intensities sit on the 16-bit grid,
/// so writing and re-loading is lossless.
pub fn synthesize(cfg: &SynthConfig) -> Result<Vec<LrStack>> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, rng::STREAM_SYNTH);
    let lr = cfg.hr_size / cfg.upscale;
    let s = cfg.shift_px as u64;
    (0..cfg.n_scenes)
        .map(|i| {
            let band = if i % 2 == 0 { Band::Nir } else { Band::Red };
            let hr = texture(cfg.hr_size, &mut rng);
            let (mut frames, mut masks) = (Vec::new(), Vec::new());
            for _ in 0..cfg.frames {
                let dx = rng::below(&mut rng, 2 * s + 1) as isize - s as isize;
                let dy = rng::below(&mut rng, 2 * s + 1) as isize - s as isize;
                let mut values = box_downsample(&hr, cfg.upscale, dx, dy);
                if cfg.noise_sigma > 0.0 {
                    for v in &mut values {
                        *v += cfg.noise_sigma * rng::normal(&mut rng);
                    }
                }
                let mut mask = Mask::filled(lr, lr, true);
                if rng::unit(&mut rng) < cfg.cloud_prob {
                    cloud(lr, &mut values, &mut mask, &mut rng);
                }
                frames.push(Image::new(lr, lr, values.into_iter().map(|v| snap(v.clamp(0.0, 1.0))).collect())?);
                masks.push(mask);
            }
            let hr_mask = Mask::filled(cfg.hr_size, cfg.hr_size, true);
            Ok(LrStack::new(format!("{band}/imgset{i:04}"), band, frames, masks, Some((hr, hr_mask)))?)
        })
        .collect()
}

/// Generates the dataset and writes it below `root`.
pub fn synthesize_dataset(root: &Path, cfg: &SynthConfig) -> Result<Vec<LrStack>> {
    let scenes = synthesize(cfg)?;
    for s in &scenes {
        dataset::write_scene(root, s)?;
    }
    Ok(scenes)
}
