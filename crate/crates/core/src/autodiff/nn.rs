//! Normalization, pooling and order-statistic operators.

use alloc::vec;
use alloc::vec::Vec;

use super::elementwise::split_axis;
use super::{GradSink, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(super) fn softmax_backward<T: Scalar>(
    sink: &mut GradSink<'_, T>,
    a: Var,
    axis: usize,
    out: &Tensor<T>,
    g: &[T],
) {
    let (outer, n, inner) = split_axis(out.shape(), axis);
    let y = out.data();
    sink.accumulate(a, |dst| {
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let mut dot = T::ZERO;
                for k in 0..n {
                    dot += g[at(k)] * y[at(k)];
                }
                for k in 0..n {
                    dst[at(k)] += y[at(k)] * (g[at(k)] - dot);
                }
            }
        }
    });
}

pub(super) fn layer_norm_backward<T: Scalar>(
    sink: &mut GradSink<'_, T>,
    x: Var,
    gamma: Var,
    beta: Var,
    mean: &[T],
    rstd: &[T],
    g: &[T],
) {
    let xd = sink.value(x).data();
    let gd = sink.value(gamma).data();
    let e = gd.len();
    let rows = xd.len() / e;
    let inv_e = T::ONE / T::from_usize(e);
    let xhat = |r: usize, j: usize| (xd[r * e + j] - mean[r]) * rstd[r];

    if sink.wants(x) {
        sink.accumulate(x, |dst| {
            for r in 0..rows {
                let mut m1 = T::ZERO;
                let mut m2 = T::ZERO;
                for j in 0..e {
                    let dxh = g[r * e + j] * gd[j];
                    m1 += dxh;
                    m2 += dxh * xhat(r, j);
                }
                m1 *= inv_e;
                m2 *= inv_e;
                for j in 0..e {
                    let dxh = g[r * e + j] * gd[j];
                    dst[r * e + j] += rstd[r] * (dxh - m1 - xhat(r, j) * m2);
                }
            }
        });
    }
    sink.accumulate(gamma, |dst| {
        for r in 0..rows {
            for j in 0..e {
                dst[j] += g[r * e + j] * xhat(r, j);
            }
        }
    });
    sink.accumulate(beta, |dst| {
        for r in 0..rows {
            for j in 0..e {
                dst[j] += g[r * e + j];
            }
        }
    });
}

pub(super) fn global_avg_pool_backward<T: Scalar>(sink: &mut GradSink<'_, T>, a: Var, g: &[T]) {
    let shape = sink.value(a).shape();
    let hw = shape[2] * shape[3];
    let k = T::ONE / T::from_usize(hw);
    sink.accumulate(a, |dst| {
        for (plane, &gv) in dst.chunks_mut(hw).zip(g) {
            for d in plane {
                *d += gv * k;
            }
        }
    });
}

pub(super) fn median_backward<T: Scalar>(
    sink: &mut GradSink<'_, T>,
    x: Var,
    picks: &[(usize, usize)],
    g: &[T],
) {
    let half = T::from_f64(0.5);
    sink.accumulate(x, |dst| {
        for (&(p, q), &gv) in picks.iter().zip(g) {
            if p == q {
                dst[p] += gv;
            } else {
                dst[p] += gv * half;
                dst[q] += gv * half;
            }
        }
    });
}

impl<T: Scalar> Tape<T> {
    /// Softmax along `axis`, max-shifted for stability.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("softmax", alloc::format!("axis {axis} for shape {shape:?}")));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let x = self.data(a);
        let mut out = vec![T::ZERO; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let mut m = x[at(0)];
                for k in 1..n {
                    m = m.max(x[at(k)]);
                }
                let mut s = T::ZERO;
                for k in 0..n {
                    let e = (x[at(k)] - m).exp();
                    out[at(k)] = e;
                    s += e;
                }
                let inv = T::ONE / s;
                for k in 0..n {
                    out[at(k)] *= inv;
                }
            }
        }
        let v = Tensor::new(shape, out)?;
        Ok(self.push(v, Op::Softmax(a, axis), &[a]))
    }

    /// Normalizes over the last axis, then applies `gamma * x_hat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let e = *shape.last().ok_or(Error::shape("layer_norm", "rank-0 input"))?;
        if self.shape(gamma) != [e] || self.shape(beta) != [e] {
            return Err(Error::shape(
                "layer_norm",
                alloc::format!(
                    "affine shapes {:?}/{:?} do not match feature size {}",
                    self.shape(gamma),
                    self.shape(beta),
                    e
                ),
            ));
        }
        let xd = self.data(x);
        let (gd, bd) = (self.data(gamma), self.data(beta));
        let rows = xd.len() / e.max(1);
        let inv_e = T::ONE / T::from_usize(e);
        let eps = T::from_f64(eps);
        let mut mean = Vec::with_capacity(rows);
        let mut rstd = Vec::with_capacity(rows);
        let mut out = vec![T::ZERO; xd.len()];
        for r in 0..rows {
            let row = &xd[r * e..(r + 1) * e];
            let mu = row.iter().fold(T::ZERO, |acc, &v| acc + v) * inv_e;
            let var = row.iter().fold(T::ZERO, |acc, &v| acc + (v - mu) * (v - mu)) * inv_e;
            let rs = T::ONE / (var + eps).sqrt();
            for j in 0..e {
                out[r * e + j] = (row[j] - mu) * rs * gd[j] + bd[j];
            }
            mean.push(mu);
            rstd.push(rs);
        }
        let v = Tensor::new(shape, out)?;
        Ok(self.push(
            v,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    /// Mean over the two trailing spatial axes of a `[B, C, H, W]` tensor.
    pub fn global_avg_pool2d(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 4 || shape[2] * shape[3] == 0 {
            return Err(Error::shape("global_avg_pool2d", alloc::format!("expected non-empty [B,C,H,W], got {shape:?}")));
        }
        let hw = shape[2] * shape[3];
        let k = T::ONE / T::from_usize(hw);
        let out: Vec<T> = self
            .data(a)
            .chunks(hw)
            .map(|p| p.iter().fold(T::ZERO, |acc, &v| acc + v) * k)
            .collect();
        let v = Tensor::new(vec![shape[0], shape[1], 1, 1], out)?;
        Ok(self.push(v, Op::GlobalAvgPool(a), &[a]))
    }

    /// Elementwise median along `axis` (axis removed). An even count takes
    /// the mean of the two middle values; ties are ordered by position.
    pub fn median(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("median", alloc::format!("axis {axis} for shape {shape:?}")));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        if n == 0 {
            return Err(Error::Empty("median"));
        }
        let src = self.data(x);
        let half = T::from_f64(0.5);
        let mut out = Vec::with_capacity(outer * inner);
        let mut picks = Vec::with_capacity(outer * inner);
        let mut order: Vec<usize> = Vec::with_capacity(n);
        for o in 0..outer {
            for i in 0..inner {
                order.clear();
                order.extend((0..n).map(|k| (o * n + k) * inner + i));
                order.sort_by(|&p, &q| {
                    src[p]
                        .partial_cmp(&src[q])
                        .unwrap_or(core::cmp::Ordering::Equal)
                        .then(p.cmp(&q))
                });
                let (p, q) = if n % 2 == 1 {
                    (order[n / 2], order[n / 2])
                } else {
                    (order[n / 2 - 1], order[n / 2])
                };
                out.push(if p == q { src[p] } else { (src[p] + src[q]) * half });
                picks.push((p, q));
            }
        }
        let mut oshape = shape;
        oshape.remove(axis);
        let v = Tensor::new(oshape, out)?;
        Ok(self.push(v, Op::Median { x, picks }, &[x]))
    }
}
