//! Direct 2-D convolution (cross-correlation) with optional channel groups.

use alloc::vec;

use super::{GradSink, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dArgs {
    pub stride: usize,
    pub padding: usize,
    /// 1 for a dense convolution, `C` for depthwise.
    pub groups: usize,
}

impl Conv2dArgs {
    /// Stride 1 with the padding that preserves spatial size for odd kernels.
    pub fn same(kernel: usize) -> Self {
        Self {
            stride: 1,
            padding: kernel / 2,
            groups: 1,
        }
    }

    pub fn depthwise(kernel: usize, channels: usize) -> Self {
        Self {
            groups: channels,
            ..Self::same(kernel)
        }
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
    cin_g: usize,
    cout_g: usize,
}

impl Geometry {
    fn new(x: &[usize], w: &[usize], b: Option<&[usize]>, args: Conv2dArgs) -> Result<Self> {
        let fail = |detail: alloc::string::String| Err(Error::shape("conv2d", detail));
        if x.len() != 4 || w.len() != 4 {
            return fail(alloc::format!("expected rank-4 input and weight, got {x:?} and {w:?}"));
        }
        let (batch, cin, h, wd) = (x[0], x[1], x[2], x[3]);
        let (cout, cin_g, kh, kw) = (w[0], w[1], w[2], w[3]);
        let groups = args.groups;
        if args.stride == 0 || groups == 0 {
            return fail("stride and groups must be positive".into());
        }
        if cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g {
            return fail(alloc::format!(
                "input has {cin} channels but weight {w:?} with {groups} group(s) expects {}",
                cin_g * groups
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return fail(alloc::format!("kernel {kh}x{kw} must have odd extents"));
        }
        if let Some(b) = b {
            if b != [cout] {
                return fail(alloc::format!("bias shape {b:?} does not match {cout} output channels"));
            }
        }
        if h + 2 * args.padding < kh || wd + 2 * args.padding < kw {
            return fail(alloc::format!("kernel {kh}x{kw} larger than padded input {h}x{wd}"));
        }
        Ok(Self {
            batch,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            ho: (h + 2 * args.padding - kh) / args.stride + 1,
            wo: (wd + 2 * args.padding - kw) / args.stride + 1,
            stride: args.stride,
            pad: args.padding,
            cin_g,
            cout_g: cout / groups,
        })
    }

    /// Output columns `[lo, hi)` whose tap `kx` lands inside the input row.
    fn col_range(&self, kx: usize) -> (usize, usize) {
        // ix = ox * stride + kx - pad must lie in [0, w)
        let lo = if self.pad > kx {
            (self.pad - kx).div_ceil(self.stride)
        } else {
            0
        };
        let hi = if self.w + self.pad > kx {
            ((self.w + self.pad - kx - 1) / self.stride + 1).min(self.wo)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    /// Input row for output row `oy` and tap `ky`, if inside the image.
    fn row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky).checked_sub(self.pad)?;
        (iy < self.h).then_some(iy)
    }

    /// Visits `(x_offset, out_offset, len)` runs for one (input plane, output plane, tap).
    fn runs(&self, ky: usize, kx: usize, mut f: impl FnMut(usize, usize, usize)) {
        let (lo, hi) = self.col_range(kx);
        if lo >= hi {
            return;
        }
        for oy in 0..self.ho {
            if let Some(iy) = self.row(oy, ky) {
                let ix0 = lo * self.stride + kx - self.pad;
                f(iy * self.w + ix0, oy * self.wo + lo, hi - lo);
            }
        }
    }
}

pub(super) fn conv2d_backward<T: Scalar>(
    sink: &mut GradSink<'_, T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    args: Conv2dArgs,
    g: &[T],
) {
    let (tx, tw) = (sink.value(x), sink.value(w));
    let geo = Geometry::new(tx.shape(), tw.shape(), b.map(|b| sink.value(b).shape()), args)
        .expect("checked in forward");
    let (xd, wd) = (tx.data(), tw.data());
    let (hw_in, hw_out, kk) = (geo.h * geo.w, geo.ho * geo.wo, geo.kh * geo.kw);
    let s = geo.stride;

    if let Some(b) = b {
        sink.accumulate(b, |db| {
            for n in 0..geo.batch {
                for co in 0..geo.cout {
                    let plane = &g[(n * geo.cout + co) * hw_out..(n * geo.cout + co + 1) * hw_out];
                    db[co] += plane.iter().fold(T::ZERO, |acc, &v| acc + v);
                }
            }
        });
    }
    if sink.wants(w) {
        sink.accumulate(w, |dw| {
            for n in 0..geo.batch {
                for co in 0..geo.cout {
                    let grp = co / geo.cout_g;
                    let gp = &g[(n * geo.cout + co) * hw_out..(n * geo.cout + co + 1) * hw_out];
                    for cl in 0..geo.cin_g {
                        let ci = grp * geo.cin_g + cl;
                        let xp = &xd[(n * geo.cin + ci) * hw_in..(n * geo.cin + ci + 1) * hw_in];
                        for ky in 0..geo.kh {
                            for kx in 0..geo.kw {
                                let mut acc = T::ZERO;
                                geo.runs(ky, kx, |xo, oo, len| {
                                    for j in 0..len {
                                        acc += gp[oo + j] * xp[xo + j * s];
                                    }
                                });
                                dw[(co * geo.cin_g + cl) * kk + ky * geo.kw + kx] += acc;
                            }
                        }
                    }
                }
            }
        });
    }
    if sink.wants(x) {
        sink.accumulate(x, |dx| {
            for n in 0..geo.batch {
                for co in 0..geo.cout {
                    let grp = co / geo.cout_g;
                    let gp = &g[(n * geo.cout + co) * hw_out..(n * geo.cout + co + 1) * hw_out];
                    for cl in 0..geo.cin_g {
                        let ci = grp * geo.cin_g + cl;
                        let xp = &mut dx[(n * geo.cin + ci) * hw_in..(n * geo.cin + ci + 1) * hw_in];
                        for ky in 0..geo.kh {
                            for kx in 0..geo.kw {
                                let wv = wd[(co * geo.cin_g + cl) * kk + ky * geo.kw + kx];
                                geo.runs(ky, kx, |xo, oo, len| {
                                    for j in 0..len {
                                        xp[xo + j * s] += wv * gp[oo + j];
                                    }
                                });
                            }
                        }
                    }
                }
            }
        });
    }
}

impl<T: Scalar> Tape<T> {
    /// Cross-correlation of `x: [B, Cin, H, W]` with `w: [Cout, Cin / groups, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, args: Conv2dArgs) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let geo = Geometry::new(tx.shape(), tw.shape(), b.map(|b| self.shape(b)), args)?;
        let (xd, wd) = (tx.data(), tw.data());
        let (hw_in, hw_out, kk) = (geo.h * geo.w, geo.ho * geo.wo, geo.kh * geo.kw);
        let s = geo.stride;
        let mut out = vec![T::ZERO; geo.batch * geo.cout * hw_out];
        for n in 0..geo.batch {
            for co in 0..geo.cout {
                let grp = co / geo.cout_g;
                let op = &mut out[(n * geo.cout + co) * hw_out..(n * geo.cout + co + 1) * hw_out];
                if let Some(b) = b {
                    let bv = self.data(b)[co];
                    op.iter_mut().for_each(|v| *v = bv);
                }
                for cl in 0..geo.cin_g {
                    let ci = grp * geo.cin_g + cl;
                    let xp = &xd[(n * geo.cin + ci) * hw_in..(n * geo.cin + ci + 1) * hw_in];
                    for ky in 0..geo.kh {
                        for kx in 0..geo.kw {
                            let wv = wd[(co * geo.cin_g + cl) * kk + ky * geo.kw + kx];
                            geo.runs(ky, kx, |xo, oo, len| {
                                for j in 0..len {
                                    op[oo + j] += wv * xp[xo + j * s];
                                }
                            });
                        }
                    }
                }
            }
        }
        let v = Tensor::new(vec![geo.batch, geo.cout, geo.ho, geo.wo], out)?;
        let inputs: alloc::vec::Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(v, Op::Conv2d { x, w, b, args }, &inputs))
    }

    /// Per-channel convolution: `w: [C, 1, kh, kw]`, no cross-channel mixing.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let shape = self.shape(x);
        if shape.len() != 4 {
            return Err(Error::shape("depthwise_conv2d", alloc::format!("expected [B,C,H,W], got {shape:?}")));
        }
        let c = shape[1];
        let ws = self.shape(w);
        if ws.len() != 4 || ws[0] != c || ws[1] != 1 {
            return Err(Error::shape(
                "depthwise_conv2d",
                alloc::format!("weight {ws:?} does not match {c} channels (expected [{c}, 1, kh, kw])"),
            ));
        }
        self.conv2d(x, w, b, Conv2dArgs { stride, padding, groups: c })
    }
}
