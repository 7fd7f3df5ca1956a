//! Clearance-masked quality metrics with brightness-bias correction and a
//! search over integer registration shifts.
//!
//! The HR image is cropped by `border` pixels on each side. For every shift
//! `(u, v)` in `[border - max_shift, border + max_shift]²` the SR window with
//! top-left corner `(u, v)` is compared against that crop on the HR clear
//! pixels only. `u` is the column offset and `v` the row offset, so an
//! unshifted comparison reports `(border, border)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricConfig {
    pub border: usize,
    pub max_shift: usize,
    /// Reported when the bias-corrected error vanishes.
    pub cap_db: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { border: 3, max_shift: 3, cap_db: 100.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneScore {
    pub cpsnr: f64,
    pub cssim: f64,
    /// `(u, v)` of the best cPSNR shift.
    pub best_shift: (usize, usize),
    /// Mean of `hr - sr` over clear pixels at the best shift.
    pub bias: f64,
}

/// HR crop geometry shared by both metrics.
struct Frame<'a> {
    sr: &'a Image,
    hr: &'a Image,
    mask: &'a Mask,
    border: usize,
    w: usize,
    h: usize,
}

impl<'a> Frame<'a> {
    fn new(sr: &'a Image, hr: &'a Image, mask: &'a Mask, cfg: &MetricConfig) -> Result<Self> {
        if sr.dims() != hr.dims() || mask.dims() != hr.dims() {
            return Err(Error::shape(
                "metric",
                alloc::format!("sr {:?}, hr {:?} and mask {:?} must agree", sr.dims(), hr.dims(), mask.dims()),
            ));
        }
        if cfg.max_shift > cfg.border {
            return Err(Error::Config(alloc::format!(
                "max_shift {} exceeds border {}",
                cfg.max_shift, cfg.border
            )));
        }
        let (w, h) = hr.dims();
        if w <= 2 * cfg.border || h <= 2 * cfg.border {
            return Err(Error::shape("metric", alloc::format!("{w}x{h} image has no interior at border {}", cfg.border)));
        }
        let f = Self { sr, hr, mask, border: cfg.border, w: w - 2 * cfg.border, h: h - 2 * cfg.border };
        if !(0..f.h).any(|y| (0..f.w).any(|x| f.clear(x, y))) {
            return Err(Error::EmptyMask("metric crop"));
        }
        Ok(f)
    }

    fn shifts(&self, max_shift: usize) -> impl Iterator<Item = (usize, usize)> {
        let (lo, hi) = (self.border - max_shift, self.border + max_shift);
        (lo..=hi).flat_map(move |v| (lo..=hi).map(move |u| (u, v)))
    }

    fn clear(&self, x: usize, y: usize) -> bool {
        self.mask.get(x + self.border, y + self.border)
    }

    fn hr(&self, x: usize, y: usize) -> f64 {
        self.hr.get(x + self.border, y + self.border) as f64
    }

    fn sr(&self, (u, v): (usize, usize), x: usize, y: usize) -> f64 {
        self.sr.get(x + u, y + v) as f64
    }

    /// Bias and the bias-corrected residual `hr - (sr + bias)` on the crop
    /// (zero at occluded pixels).
    ///
    /// Residuals are centred on the first clear residual before averaging so
    /// that adding a constant to `sr` leaves every intermediate unchanged
    /// whenever that addition itself was exact.
    fn residuals(&self, shift: (usize, usize)) -> (f64, Vec<f64>) {
        let mut anchor = None;
        let mut res = vec![0.0; self.w * self.h];
        let mut n = 0usize;
        for y in 0..self.h {
            for x in 0..self.w {
                if self.clear(x, y) {
                    let d = self.hr(x, y) - self.sr(shift, x, y);
                    let a = *anchor.get_or_insert(d);
                    res[y * self.w + x] = d - a;
                    n += 1;
                }
            }
        }
        let mean = res.iter().sum::<f64>() / n as f64;
        for y in 0..self.h {
            for x in 0..self.w {
                if self.clear(x, y) {
                    res[y * self.w + x] -= mean;
                }
            }
        }
        (anchor.unwrap_or(0.0) + mean, res)
    }

    fn mse(&self, res: &[f64]) -> f64 {
        let n = (0..self.h).flat_map(|y| (0..self.w).map(move |x| (x, y))).filter(|&(x, y)| self.clear(x, y)).count();
        res.iter().map(|r| r * r).sum::<f64>() / n as f64
    }

    fn ssim(&self, res: &[f64]) -> Result<f64> {
        if self.w < SSIM_WINDOW || self.h < SSIM_WINDOW {
            return Err(Error::shape("cssim", alloc::format!("{}x{} crop is smaller than the SSIM window", self.w, self.h)));
        }
        let n = self.w * self.h;
        // Masked moments: m, m*x, m*y, m*x², m*y², m*x*y.
        let mut planes = vec![vec![0.0f64; n]; 6];
        for y in 0..self.h {
            for x in 0..self.w {
                if self.clear(x, y) {
                    let a = self.hr(x, y);
                    let i = y * self.w + x;
                    let b = a - res[i];
                    for (p, v) in planes.iter_mut().zip([1.0, a, b, a * a, b * b, a * b]) {
                        p[i] = v;
                    }
                }
            }
        }
        let g = gaussian_taps();
        let (ow, oh) = (self.w - SSIM_WINDOW + 1, self.h - SSIM_WINDOW + 1);
        let filtered: Vec<Vec<f64>> = planes.iter().map(|p| filter_valid(p, self.w, self.h, &g)).collect();
        let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
        let r = SSIM_WINDOW / 2;
        let (mut total, mut count) = (0.0, 0usize);
        for y in 0..oh {
            for x in 0..ow {
                if !self.clear(x + r, y + r) {
                    continue;
                }
                let i = y * ow + x;
                let s = filtered[0][i];
                let (mx, my) = (filtered[1][i] / s, filtered[2][i] / s);
                let vx = filtered[3][i] / s - mx * mx;
                let vy = filtered[4][i] / s - my * my;
                let cxy = filtered[5][i] / s - mx * my;
                total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::EmptyMask("cssim window centres"));
        }
        Ok(total / count as f64)
    }
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = libm::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Separable correlation keeping only fully covered positions.
fn filter_valid(p: &[f64], w: usize, h: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let ow = w - k + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &p[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = g.iter().zip(&line[x..x + k]).map(|(a, b)| a * b).sum();
        }
    }
    let oh = h - k + 1;
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for (j, gj) in g.iter().enumerate() {
            let src = &rows[(y + j) * ow..(y + j + 1) * ow];
            for (o, s) in out[y * ow..(y + 1) * ow].iter_mut().zip(src) {
                *o += gj * s;
            }
        }
    }
    out
}

fn psnr(mse: f64, cap: f64) -> f64 {
    if mse <= 0.0 {
        return cap;
    }
    (-10.0 * libm::log10(mse)).min(cap)
}

/// Full scene score: best cPSNR with its shift and bias, and the best cSSIM.
///
/// The two maxima are taken independently over the same shift window.
pub fn cpsnr(sr: &Image, hr: &Image, hr_mask: &Mask, cfg: &MetricConfig) -> Result<SceneScore> {
    let f = Frame::new(sr, hr, hr_mask, cfg)?;
    let mut best: Option<SceneScore> = None;
    for shift in f.shifts(cfg.max_shift) {
        let (bias, res) = f.residuals(shift);
        let p = psnr(f.mse(&res), cfg.cap_db);
        let s = f.ssim(&res)?;
        match &mut best {
            None => best = Some(SceneScore { cpsnr: p, cssim: s, best_shift: shift, bias }),
            Some(b) => {
                if p > b.cpsnr {
                    b.cpsnr = p;
                    b.best_shift = shift;
                    b.bias = bias;
                }
                b.cssim = b.cssim.max(s);
            }
        }
    }
    Ok(best.expect("shift window is never empty"))
}

/// cPSNR alone, skipping the SSIM work. Also works on crops smaller than the
/// SSIM window.
pub fn cpsnr_value(sr: &Image, hr: &Image, hr_mask: &Mask, cfg: &MetricConfig) -> Result<f64> {
    let f = Frame::new(sr, hr, hr_mask, cfg)?;
    Ok(f.shifts(cfg.max_shift).map(|s| psnr(f.mse(&f.residuals(s).1), cfg.cap_db)).fold(f64::NEG_INFINITY, f64::max))
}

/// Best bias-corrected, clearance-weighted SSIM over the shift window.
pub fn cssim(sr: &Image, hr: &Image, hr_mask: &Mask, cfg: &MetricConfig) -> Result<f64> {
    let f = Frame::new(sr, hr, hr_mask, cfg)?;
    let mut best = f64::NEG_INFINITY;
    for shift in f.shifts(cfg.max_shift) {
        best = best.max(f.ssim(&f.residuals(shift).1)?);
    }
    Ok(best)
}

fn catmull_rom(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Source indices and weights for each output coordinate along one axis.
fn taps(src_len: usize, r: usize) -> Vec<([usize; 4], [f64; 4])> {
    (0..src_len * r)
        .map(|d| {
            let s = (d as f64 + 0.5) / r as f64 - 0.5;
            let i0 = libm::floor(s);
            let t = s - i0;
            let clamp = |i: f64| (i.max(0.0) as usize).min(src_len - 1);
            (
                [clamp(i0 - 1.0), clamp(i0), clamp(i0 + 1.0), clamp(i0 + 2.0)],
                [catmull_rom(t + 1.0), catmull_rom(t), catmull_rom(1.0 - t), catmull_rom(2.0 - t)],
            )
        })
        .collect()
}

/// Catmull-Rom bicubic upscaling with edge clamping.
pub fn bicubic_upscale(lr: &Image, r: usize) -> Result<Image> {
    if r == 0 {
        return Err(Error::Config("upscale factor must be at least 1".into()));
    }
    let (w, h) = lr.dims();
    if w == 0 || h == 0 {
        return Err(Error::Empty("bicubic_upscale"));
    }
    let (tx, ty) = (taps(w, r), taps(h, r));
    // Horizontal pass into f64, then vertical.
    let mut rows = vec![0.0f64; w * r * h];
    for y in 0..h {
        for (x, (idx, wt)) in tx.iter().enumerate() {
            rows[y * w * r + x] = (0..4).map(|k| wt[k] * lr.get(idx[k], y) as f64).sum();
        }
    }
    let ow = w * r;
    Ok(Image::from_fn(ow, h * r, |x, y| {
        let (idx, wt) = &ty[y];
        (0..4).map(|k| wt[k] * rows[idx[k] * ow + x]).sum::<f64>() as f32
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn noise(w: usize, h: usize, seed: u64) -> Image {
        let mut r = rng::stream(seed, 31);
        Image::from_fn(w, h, |_, _| rng::unit(&mut r) as f32)
    }

    fn random_mask(w: usize, h: usize, p_clear: f64, seed: u64) -> Mask {
        let mut r = rng::stream(seed, 32);
        Mask::from_fn(w, h, |_, _| rng::unit(&mut r) < p_clear)
    }

    /// Values on a 2^-16 grid so that adding small dyadic constants is exact in f32.
    fn dyadic(w: usize, h: usize, seed: u64) -> Image {
        let mut r = rng::stream(seed, 33);
        Image::from_fn(w, h, |_, _| rng::below(&mut r, 1 << 16) as f32 / 65536.0)
    }

    fn clear(w: usize, h: usize) -> Mask {
        Mask::filled(w, h, true)
    }

    #[test]
    fn identity_hits_the_cap() {
        let hr = noise(24, 24, 1);
        let s = cpsnr(&hr, &hr, &clear(24, 24), &MetricConfig::default()).unwrap();
        assert_eq!(s.cpsnr, 100.0);
        assert!((s.cssim - 1.0).abs() < 1e-9);
        assert_eq!(s.best_shift, (3, 3));
        assert_eq!(s.bias, 0.0);
    }

    #[test]
    fn constant_offset_is_absorbed() {
        let hr = noise(24, 24, 2);
        let sr = hr.map(|v| v + 0.1);
        let s = cpsnr(&sr, &hr, &clear(24, 24), &MetricConfig::default()).unwrap();
        assert_eq!(s.cpsnr, 100.0);
        assert!((s.bias + 0.1).abs() < 1e-6);
        assert!((s.cssim - 1.0).abs() < 1e-9);
    }

    #[test]
    fn hand_computed_psnr() {
        // Residuals 0, -0.1, 0, +0.1 have zero mean, so MSE = 0.02 / 4.
        let hr = Image::filled(2, 2, 0.5);
        let sr = Image::new(2, 2, vec![0.5, 0.6, 0.5, 0.4]).unwrap();
        let cfg = MetricConfig { border: 0, max_shift: 0, cap_db: 100.0 };
        let p = cpsnr_value(&sr, &hr, &clear(2, 2), &cfg).unwrap();
        assert!((p - 23.010_299_956_639_81).abs() < 1e-5, "{p}");
    }

    #[test]
    fn registration_shift_is_found() {
        let hr = noise(30, 30, 3);
        // Content moved one pixel to the right.
        let sr = Image::from_fn(30, 30, |x, y| if x == 0 { 0.5 } else { hr.get(x - 1, y) });
        let m = clear(30, 30);
        let s = cpsnr(&sr, &hr, &m, &MetricConfig::default()).unwrap();
        assert_eq!(s.best_shift, (4, 3));
        assert_eq!(s.cpsnr, 100.0);
        let fixed = cpsnr(&sr, &hr, &m, &MetricConfig { max_shift: 0, ..MetricConfig::default() }).unwrap();
        assert!(fixed.cpsnr < 40.0);
        assert_eq!(fixed.best_shift, (3, 3));
    }

    #[test]
    fn occluded_crop_is_an_error() {
        let hr = noise(16, 16, 4);
        // Only the border is clear.
        let m = Mask::from_fn(16, 16, |x, y| x < 3 || y < 3 || x >= 13 || y >= 13);
        let cfg = MetricConfig::default();
        assert_eq!(cpsnr_value(&hr, &hr, &m, &cfg).unwrap_err(), Error::EmptyMask("metric crop"));
        assert!(cssim(&hr, &hr, &m, &cfg).is_err());
    }

    #[test]
    fn bad_geometry_is_rejected() {
        let a = noise(16, 16, 5);
        let b = noise(16, 15, 5);
        let cfg = MetricConfig::default();
        assert!(cpsnr(&a, &b, &clear(16, 15), &cfg).is_err());
        assert!(cpsnr(&a, &a, &clear(16, 16), &MetricConfig { max_shift: 4, ..cfg }).is_err());
        assert!(cpsnr(&a, &a, &clear(16, 16), &cfg).is_err(), "10x10 crop is below the SSIM window");
        assert!(cpsnr_value(&a, &a, &clear(16, 16), &cfg).is_ok());
    }

    #[test]
    fn inverted_image_scores_below_one() {
        let hr = noise(24, 24, 6);
        let inv = hr.map(|v| 1.0 - v);
        assert!(cssim(&inv, &hr, &clear(24, 24), &MetricConfig::default()).unwrap() < 0.5);
    }

    #[test]
    fn only_clear_pixels_matter() {
        let (hr, sr) = (noise(26, 26, 7), noise(26, 26, 8));
        let m = random_mask(26, 26, 0.7, 9);
        let scramble = |img: &Image, seed| {
            let other = noise(26, 26, seed);
            Image::from_fn(26, 26, |x, y| if m.get(x, y) { img.get(x, y) } else { other.get(x, y) })
        };
        // Zero shift keeps the SR window aligned with the mask.
        let cfg = MetricConfig { max_shift: 0, ..MetricConfig::default() };
        let a = cpsnr(&sr, &hr, &m, &cfg).unwrap();
        let b = cpsnr(&scramble(&sr, 10), &scramble(&hr, 11), &m, &cfg).unwrap();
        assert_eq!(a, b);
    }

    /// Direct evaluation of the masked, bias-corrected SSIM: explicit 2-D
    /// Gaussian window, weighted moments from their definitions.
    fn ssim_oracle(sr: &Image, hr: &Image, m: &Mask, border: usize, max_shift: usize) -> f64 {
        let (w, h) = (hr.width() - 2 * border, hr.height() - 2 * border);
        let mut best = f64::NEG_INFINITY;
        for v in border - max_shift..=border + max_shift {
            for u in border - max_shift..=border + max_shift {
                let (mut num, mut n) = (0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        if m.get(x + border, y + border) {
                            num += hr.get(x + border, y + border) as f64 - sr.get(x + u, y + v) as f64;
                            n += 1.0;
                        }
                    }
                }
                let bias = num / n;
                let (mut total, mut count) = (0.0, 0.0);
                for cy in 5..h - 5 {
                    for cx in 5..w - 5 {
                        if !m.get(cx + border, cy + border) {
                            continue;
                        }
                        let mut acc = [0.0f64; 6];
                        for dy in 0..11 {
                            for dx in 0..11 {
                                let (x, y) = (cx + dx - 5, cy + dy - 5);
                                if !m.get(x + border, y + border) {
                                    continue;
                                }
                                let r2 = ((dx as f64 - 5.0).powi(2) + (dy as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5);
                                let g = (-r2).exp();
                                let a = hr.get(x + border, y + border) as f64;
                                let b = sr.get(x + u, y + v) as f64 + bias;
                                acc[0] += g;
                                acc[1] += g * a;
                                acc[2] += g * b;
                                acc[3] += g * a * a;
                                acc[4] += g * b * b;
                                acc[5] += g * a * b;
                            }
                        }
                        let mx = acc[1] / acc[0];
                        let my = acc[2] / acc[0];
                        let vx = acc[3] / acc[0] - mx * mx;
                        let vy = acc[4] / acc[0] - my * my;
                        let cxy = acc[5] / acc[0] - mx * my;
                        let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
                        total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                        count += 1.0;
                    }
                }
                best = best.max(total / count);
            }
        }
        best
    }

    #[test]
    fn cssim_matches_direct_oracle() {
        for seed in 0..6 {
            let hr = noise(32, 32, 100 + seed);
            let sr = Image::from_fn(32, 32, |x, y| 0.7 * hr.get(x, y) + 0.3 * noise(32, 32, 200 + seed).get(x, y) + 0.05);
            let m = if seed % 2 == 0 { clear(32, 32) } else { random_mask(32, 32, 0.8, seed) };
            let max_shift = (seed % 3) as usize;
            let cfg = MetricConfig { max_shift, ..MetricConfig::default() };
            let got = cssim(&sr, &hr, &m, &cfg).unwrap();
            let want = ssim_oracle(&sr, &hr, &m, 3, max_shift);
            assert!((got - want).abs() < 1e-9, "seed {seed}: {got} vs {want}");
            assert_eq!(cpsnr(&sr, &hr, &m, &cfg).unwrap().cssim, got);
        }
    }

    #[test]
    fn bicubic_basics() {
        let c = Image::filled(5, 4, 0.375);
        let up = bicubic_upscale(&c, 3).unwrap();
        assert_eq!(up.dims(), (15, 12));
        assert!(up.data().iter().all(|v| (v - 0.375).abs() < 1e-6));

        let img = noise(6, 5, 12);
        assert_eq!(bicubic_upscale(&img, 1).unwrap(), img);
        assert!(bicubic_upscale(&img, 0).is_err());
    }

    #[test]
    fn bicubic_preserves_linear_ramps_in_the_interior() {
        let (a, b, c) = (0.01, 0.02, 0.1);
        let lr = Image::from_fn(12, 10, |x, y| (a * x as f64 + b * y as f64 + c) as f32);
        let r = 3;
        let up = bicubic_upscale(&lr, r).unwrap();
        // Output pixel centres map back to (d + 0.5) / r - 0.5 in LR coordinates;
        // clamping only affects taps within two LR pixels of the edge.
        for y in 2 * r..(10 - 2) * r {
            for x in 2 * r..(12 - 2) * r {
                let sx = (x as f64 + 0.5) / r as f64 - 0.5;
                let sy = (y as f64 + 0.5) / r as f64 - 0.5;
                let want = a * sx + b * sy + c;
                assert!((up.get(x, y) as f64 - want).abs() < 1e-6);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn bias_invariance_is_exact(seed in 0u64..1000, k in -64i32..64) {
                let hr = dyadic(20, 20, seed);
                let sr = dyadic(20, 20, seed + 1);
                let m = random_mask(20, 20, 0.6, seed);
                let c = k as f32 / 256.0;
                let shifted = sr.map(|v| v + c);
                let cfg = MetricConfig { border: 2, max_shift: 2, cap_db: 100.0 };
                let a = cpsnr(&sr, &hr, &m, &cfg).unwrap();
                let b = cpsnr(&shifted, &hr, &m, &cfg).unwrap();
                prop_assert_eq!(a.cpsnr, b.cpsnr);
                prop_assert_eq!(a.cssim, b.cssim);
                prop_assert_eq!(a.best_shift, b.best_shift);
            }

            #[test]
            fn wider_search_never_scores_lower(seed in 0u64..1000) {
                let hr = noise(22, 22, seed);
                let sr = noise(22, 22, seed + 7).map(|v| 0.5 * v);
                let m = random_mask(22, 22, 0.9, seed);
                let wide = cpsnr(&sr, &hr, &m, &MetricConfig::default()).unwrap();
                let narrow = cpsnr(&sr, &hr, &m, &MetricConfig { max_shift: 0, ..MetricConfig::default() }).unwrap();
                prop_assert!(wide.cpsnr >= narrow.cpsnr);
                prop_assert!(wide.cssim >= narrow.cssim);
                prop_assert!(wide.cssim <= 1.0 + 1e-12);
                let (u, v) = wide.best_shift;
                prop_assert!(u <= 6 && v <= 6);
            }
        }
    }
}
