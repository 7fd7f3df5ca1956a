//! Sub-pixel rearrangement between channels and space.

use alloc::vec;

use super::{GradSink, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Visits `(shuffled_flat, unshuffled_flat)` pairs, where the shuffled side is
/// `[B, C, rH, rW]` and the unshuffled side `[B, C*r*r, H, W]`.
fn pairs(b: usize, c: usize, h: usize, w: usize, r: usize, mut f: impl FnMut(usize, usize)) {
    let (oh, ow) = (h * r, w * r);
    for n in 0..b {
        for ch in 0..c {
            for y in 0..oh {
                let (hy, i) = (y / r, y % r);
                for x in 0..ow {
                    let (wx, j) = (x / r, x % r);
                    let dst = ((n * c + ch) * oh + y) * ow + x;
                    let src = ((n * c * r * r + ch * r * r + i * r + j) * h + hy) * w + wx;
                    f(dst, src);
                }
            }
        }
    }
}

/// Returns `(b, c, h, w)` in unshuffled coordinates.
fn dims(shape: &[usize], r: usize, shuffle: bool) -> Result<(usize, usize, usize, usize)> {
    let op = if shuffle { "pixel_shuffle" } else { "pixel_unshuffle" };
    if shape.len() != 4 || r == 0 {
        return Err(Error::shape(op, alloc::format!("expected [B,C,H,W] and r >= 1, got {shape:?}, r={r}")));
    }
    if shuffle {
        if !shape[1].is_multiple_of(r * r) {
            return Err(Error::shape(op, alloc::format!("{} channels not divisible by r^2 = {}", shape[1], r * r)));
        }
        Ok((shape[0], shape[1] / (r * r), shape[2], shape[3]))
    } else {
        if !shape[2].is_multiple_of(r) || !shape[3].is_multiple_of(r) {
            return Err(Error::shape(op, alloc::format!("spatial {}x{} not divisible by {r}", shape[2], shape[3])));
        }
        Ok((shape[0], shape[1], shape[2] / r, shape[3] / r))
    }
}

pub(super) fn shuffle_backward<T: Scalar>(sink: &mut GradSink<'_, T>, a: Var, r: usize, g: &[T], shuffle: bool) {
    let (b, c, h, w) = dims(sink.value(a).shape(), r, shuffle).expect("checked in forward");
    sink.accumulate(a, |dst| {
        if shuffle {
            pairs(b, c, h, w, r, |s, u| dst[u] += g[s]);
        } else {
            pairs(b, c, h, w, r, |s, u| dst[s] += g[u]);
        }
    });
}

impl<T: Scalar> Tape<T> {
    /// `[B, C*r*r, H, W] -> [B, C, rH, rW]` with
    /// `out[b, c, r*h + i, r*w + j] = in[b, c*r*r + i*r + j, h, w]`.
    pub fn pixel_shuffle(&mut self, a: Var, r: usize) -> Result<Var> {
        let (b, c, h, w) = dims(self.shape(a), r, true)?;
        let src = self.data(a);
        let mut out = vec![T::ZERO; src.len()];
        pairs(b, c, h, w, r, |s, u| out[s] = src[u]);
        let v = Tensor::new(vec![b, c, h * r, w * r], out)?;
        Ok(self.push(v, Op::PixelShuffle(a, r), &[a]))
    }

    /// Inverse of [`Tape::pixel_shuffle`].
    pub fn pixel_unshuffle(&mut self, a: Var, r: usize) -> Result<Var> {
        let (b, c, h, w) = dims(self.shape(a), r, false)?;
        let src = self.data(a);
        let mut out = vec![T::ZERO; src.len()];
        pairs(b, c, h, w, r, |s, u| out[u] = src[s]);
        let v = Tensor::new(vec![b, c * r * r, h, w], out)?;
        Ok(self.push(v, Op::PixelUnshuffle(a, r), &[a]))
    }
}
