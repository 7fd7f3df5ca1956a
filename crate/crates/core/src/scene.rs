//! Frame stacks for one scene, clearance preprocessing and the train/val split.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::metrics::bicubic_upscale;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Band {
    Nir,
    Red,
}

impl Band {
    pub const ALL: [Band; 2] = [Band::Nir, Band::Red];

    pub fn name(self) -> &'static str {
        match self {
            Band::Nir => "NIR",
            Band::Red => "RED",
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Band {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "NIR" => Ok(Band::Nir),
            "RED" => Ok(Band::Red),
            _ => Err(Error::Config(format!("unknown band {s:?} (expected NIR or RED)"))),
        }
    }
}

/// Which bands an experiment touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandSelection {
    Nir,
    Red,
    All,
}

impl BandSelection {
    pub fn bands(self) -> &'static [Band] {
        match self {
            BandSelection::Nir => &[Band::Nir],
            BandSelection::Red => &[Band::Red],
            BandSelection::All => &Band::ALL,
        }
    }

    pub fn contains(self, band: Band) -> bool {
        self.bands().contains(&band)
    }
}

impl fmt::Display for BandSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BandSelection::Nir => "NIR",
            BandSelection::Red => "RED",
            BandSelection::All => "ALL",
        })
    }
}

impl FromStr for BandSelection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("ALL") {
            return Ok(BandSelection::All);
        }
        Ok(match s.parse::<Band>().map_err(|_| Error::Config(format!("unknown band {s:?} (expected NIR, RED or ALL)")))? {
            Band::Nir => BandSelection::Nir,
            Band::Red => BandSelection::Red,
        })
    }
}

/// LR frames of one scene with their clearance masks and optional HR target.
#[derive(Debug, Clone, PartialEq)]
pub struct LrStack {
    scene_id: String,
    band: Band,
    frames: Vec<Image>,
    masks: Vec<Mask>,
    hr: Option<(Image, Mask)>,
}

fn check_unit_range(what: &str, img: &Image) -> Result<()> {
    match img.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(Error::Config(format!("{what} has intensity {v} outside [0, 1]"))),
        None => Ok(()),
    }
}

impl LrStack {
    pub fn new(scene_id: impl Into<String>, band: Band, frames: Vec<Image>, masks: Vec<Mask>, hr: Option<(Image, Mask)>) -> Result<Self> {
        let scene_id = scene_id.into();
        let Some(first) = frames.first() else {
            return Err(Error::Empty("LrStack frames"));
        };
        if masks.len() != frames.len() {
            return Err(Error::shape("LrStack", format!("{} frames but {} masks", frames.len(), masks.len())));
        }
        let dims = first.dims();
        for (i, (f, m)) in frames.iter().zip(&masks).enumerate() {
            if f.dims() != dims || m.dims() != dims {
                return Err(Error::shape("LrStack", format!("frame {i} is {:?} / mask {:?}, expected {dims:?}", f.dims(), m.dims())));
            }
            check_unit_range(&format!("{scene_id} frame {i}"), f)?;
        }
        if let Some((img, mask)) = &hr {
            if img.dims() != mask.dims() {
                return Err(Error::shape("LrStack", format!("HR {:?} vs status mask {:?}", img.dims(), mask.dims())));
            }
            check_unit_range(&format!("{scene_id} HR"), img)?;
        }
        Ok(Self { scene_id, band, frames, masks, hr })
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    pub fn band(&self) -> Band {
        self.band
    }

    pub fn k(&self) -> usize {
        self.frames.len()
    }

    /// `(width, height)` of the LR frames.
    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn masks(&self) -> &[Mask] {
        &self.masks
    }

    pub fn hr(&self) -> Option<&Image> {
        self.hr.as_ref().map(|(i, _)| i)
    }

    pub fn hr_mask(&self) -> Option<&Mask> {
        self.hr.as_ref().map(|(_, m)| m)
    }

    /// Index of the frame with the highest clearance (lowest index on ties).
    pub fn clearest(&self) -> usize {
        let mut best = 0;
        for (i, m) in self.masks.iter().enumerate() {
            if m.count_clear() > self.masks[best].count_clear() {
                best = i;
            }
        }
        best
    }

    fn select(&self, keep: &[usize]) -> Self {
        Self {
            scene_id: self.scene_id.clone(),
            band: self.band,
            frames: keep.iter().map(|&i| self.frames[i].clone()).collect(),
            masks: keep.iter().map(|&i| self.masks[i].clone()).collect(),
            hr: self.hr.clone(),
        }
    }

    /// LR window at `(x, y)` of size `w x h` with the matching `r`-times HR window.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize, r: usize) -> Result<Self> {
        let (fw, fh) = self.dims();
        if w == 0 || h == 0 || x + w > fw || y + h > fh {
            return Err(Error::shape("LrStack::crop", format!("window {w}x{h} at ({x}, {y}) exceeds {fw}x{fh}")));
        }
        let cut = |img: &Image, s: usize| Image::from_fn(w * s, h * s, |i, j| img.get(x * s + i, y * s + j));
        let cut_mask = |m: &Mask, s: usize| Mask::from_fn(w * s, h * s, |i, j| m.get(x * s + i, y * s + j));
        let hr = match &self.hr {
            Some((img, m)) => {
                if img.dims() != (fw * r, fh * r) {
                    return Err(Error::shape("LrStack::crop", format!("HR {:?} is not {r}x the LR {fw}x{fh}", img.dims())));
                }
                Some((cut(img, r), cut_mask(m, r)))
            }
            None => None,
        };
        Ok(Self {
            scene_id: self.scene_id.clone(),
            band: self.band,
            frames: self.frames.iter().map(|f| cut(f, 1)).collect(),
            masks: self.masks.iter().map(|m| cut_mask(m, 1)).collect(),
            hr,
        })
    }

    /// Bicubic upscaling of the clearest frame.
    pub fn bicubic_baseline(&self, r: usize) -> Result<Image> {
        bicubic_upscale(&self.frames[self.clearest()], r)
    }
}

/// Drops frames whose clear fraction is below `min_clearance`. When nothing
/// survives, the single clearest frame is kept.
pub fn preprocess(stack: &LrStack, min_clearance: f64) -> LrStack {
    let keep: Vec<usize> = (0..stack.k()).filter(|&i| stack.masks[i].clearance() >= min_clearance).collect();
    if keep.is_empty() {
        return stack.select(&[stack.clearest()]);
    }
    stack.select(&keep)
}

/// Brings a stack to exactly `k` frames.
///
/// Surplus frames are removed least-clear first, keeping the survivors in
/// their original order. Missing frames are filled by appending copies in
/// order of decreasing clearance (lowest index first on ties), cycling as
/// often as needed.
pub fn pad_frames(stack: &LrStack, k: usize) -> Result<LrStack> {
    if k == 0 {
        return Err(Error::Config("frame count must be at least 1".into()));
    }
    let mut by_clearance: Vec<usize> = (0..stack.k()).collect();
    by_clearance.sort_by_key(|&i| (core::cmp::Reverse(stack.masks[i].count_clear()), i));
    let keep: Vec<usize> = if stack.k() >= k {
        let mut top = by_clearance[..k].to_vec();
        top.sort_unstable();
        top
    } else {
        (0..stack.k()).chain(by_clearance.iter().copied().cycle().take(k - stack.k())).collect()
    };
    Ok(stack.select(&keep))
}

/// Stacks scenes into a `[B, K, 1, H, W]` batch.
pub fn frames_tensor(stacks: &[&LrStack]) -> Result<Tensor<f32>> {
    let Some(first) = stacks.first() else {
        return Err(Error::Empty("frames_tensor"));
    };
    let (k, (w, h)) = (first.k(), first.dims());
    let mut data = Vec::with_capacity(stacks.len() * k * w * h);
    for s in stacks {
        if s.k() != k || s.dims() != (w, h) {
            return Err(Error::shape(
                "frames_tensor",
                format!("{} has {} frames of {:?}, expected {k} of {:?}", s.scene_id, s.k(), s.dims(), (w, h)),
            ));
        }
        for f in &s.frames {
            data.extend_from_slice(f.data());
        }
    }
    Tensor::new([stacks.len(), k, 1, h, w], data)
}

/// Train/validation partition of scene ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitManifest {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
}

/// Shuffles the sorted ids with `seed` and cuts at `round(ratio * n)`.
///
/// With two or more scenes both sides get at least one.
pub fn split(ids: &[String], seed: u64, ratio: f64) -> Result<SplitManifest> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} must lie in (0, 1]")));
    }
    if ids.is_empty() {
        return Err(Error::Empty("split"));
    }
    let mut order: Vec<String> = ids.to_vec();
    order.sort();
    if order.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("duplicate scene ids in split".into()));
    }
    rng::shuffle(&mut rng::stream(seed, rng::STREAM_SPLIT), &mut order);
    let n = order.len();
    let mut n_train = libm::round(ratio * n as f64) as usize;
    if n >= 2 {
        n_train = n_train.clamp(1, n - 1);
    }
    let val = order.split_off(n_train);
    Ok(SplitManifest { seed, train: order, val })
}

impl SplitManifest {
    pub fn to_text(&self) -> String {
        let mut out = format!("seed = {}\n[train]\n", self.seed);
        for id in &self.train {
            out.push_str(id);
            out.push('\n');
        }
        out.push_str("[val]\n");
        for id in &self.val {
            out.push_str(id);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut seed = None;
        let mut section: Option<bool> = None;
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line {
                "[train]" => section = Some(true),
                "[val]" => section = Some(false),
                _ => match section {
                    Some(true) => train.push(line.to_string()),
                    Some(false) => val.push(line.to_string()),
                    None => {
                        let value = line
                            .strip_prefix("seed")
                            .and_then(|r| r.trim_start().strip_prefix('='))
                            .ok_or_else(|| Error::Config(format!("manifest line {}: expected `seed = N`", no + 1)))?;
                        seed = Some(value.trim().parse().map_err(|_| Error::Config(format!("manifest line {}: bad seed", no + 1)))?);
                    }
                },
            }
        }
        let seed = seed.ok_or_else(|| Error::Config("manifest has no seed".into()))?;
        if train.iter().any(|t| val.contains(t)) {
            return Err(Error::Config("manifest lists a scene in both train and val".into()));
        }
        Ok(Self { seed, train, val })
    }
}
