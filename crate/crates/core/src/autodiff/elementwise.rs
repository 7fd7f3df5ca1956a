//! Broadcasting arithmetic, pointwise nonlinearities and reductions.

use alloc::vec;
use alloc::vec::Vec;

use super::{check_same_rank, GradSink, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, strides, Tensor};

/// Output shape of a broadcast between equal-rank shapes (extent 1 stretches).
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    check_same_rank(op, a, b)?;
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::shape(
                op,
                alloc::format!("cannot broadcast {:?} with {:?}", a, b),
            )),
        })
        .collect()
}

/// Strides of `shape` seen through the broadcast to `out` (0 on stretched axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let st = strides(shape);
    shape
        .iter()
        .zip(out)
        .zip(st)
        .map(|((&s, &o), st)| if s == 1 && o != 1 { 0 } else { st })
        .collect()
}

/// Visits every output position with the matching flat offsets into `a` and `b`.
fn walk(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    if numel(out) == 0 {
        return;
    }
    let rank = out.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let last = out[rank - 1];
    let (la, lb) = (sa[rank - 1], sb[rank - 1]);
    let mut idx = vec![0usize; rank - 1];
    let (mut ba, mut bb, mut o) = (0usize, 0usize, 0usize);
    'outer: loop {
        for j in 0..last {
            f(o + j, ba + j * la, bb + j * lb);
        }
        o += last;
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            ba += sa[d];
            bb += sb[d];
            if idx[d] < out[d] {
                continue 'outer;
            }
            ba -= sa[d] * out[d];
            bb -= sb[d] * out[d];
            idx[d] = 0;
        }
        return;
    }
}

fn binary<T: Scalar>(
    tape: &Tape<T>,
    op: &'static str,
    a: Var,
    b: Var,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    let (ta, tb) = (tape.value(a), tape.value(b));
    if ta.shape() == tb.shape() {
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(ta.shape().to_vec(), data);
    }
    let out = broadcast_shape(op, ta.shape(), tb.shape())?;
    let sa = broadcast_strides(ta.shape(), &out);
    let sb = broadcast_strides(tb.shape(), &out);
    let (da, db) = (ta.data(), tb.data());
    let mut data = vec![T::ZERO; numel(&out)];
    walk(&out, &sa, &sb, |o, ia, ib| data[o] = f(da[ia], db[ib]));
    Tensor::new(out, data)
}

/// Sums `g` (shaped like `out`) down to the shape of `v` and accumulates it.
fn reduce_into<T: Scalar>(sink: &mut GradSink<'_, T>, v: Var, out: &[usize], g: &[T], k: T) {
    if !sink.wants(v) {
        return;
    }
    let shape = sink.value(v).shape();
    if shape == out {
        sink.accumulate(v, |dst| {
            for (d, &gv) in dst.iter_mut().zip(g) {
                *d += k * gv;
            }
        });
        return;
    }
    let sv = broadcast_strides(shape, out);
    let zeros = vec![0; out.len()];
    sink.accumulate(v, |dst| walk(out, &sv, &zeros, |o, iv, _| dst[iv] += k * g[o]));
}

pub(super) fn add_backward<T: Scalar>(
    sink: &mut GradSink<'_, T>,
    a: Var,
    b: Var,
    out: &Tensor<T>,
    g: &[T],
    sign_b: T,
) {
    reduce_into(sink, a, out.shape(), g, T::ONE);
    reduce_into(sink, b, out.shape(), g, sign_b);
}

pub(super) fn mul_backward<T: Scalar>(
    sink: &mut GradSink<'_, T>,
    a: Var,
    b: Var,
    out: &Tensor<T>,
    g: &[T],
) {
    let out_shape = out.shape();
    let sa = broadcast_strides(sink.value(a).shape(), out_shape);
    let sb = broadcast_strides(sink.value(b).shape(), out_shape);
    if sink.wants(a) {
        let bd = sink.value(b).data();
        sink.accumulate(a, |dst| walk(out_shape, &sa, &sb, |o, ia, ib| dst[ia] += g[o] * bd[ib]));
    }
    if sink.wants(b) {
        let ad = sink.value(a).data();
        sink.accumulate(b, |dst| walk(out_shape, &sa, &sb, |o, ia, ib| dst[ib] += g[o] * ad[ia]));
    }
}

/// `(outer, n, inner)` decomposition of `shape` around `axis`.
pub(super) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(super) fn sum_axis_backward<T: Scalar>(sink: &mut GradSink<'_, T>, a: Var, axis: usize, g: &[T]) {
    let (outer, n, inner) = split_axis(sink.value(a).shape(), axis);
    sink.accumulate(a, |dst| {
        for o in 0..outer {
            for k in 0..n {
                let base = (o * n + k) * inner;
                for i in 0..inner {
                    dst[base + i] += g[o * inner + i];
                }
            }
        }
    });
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

impl<T: Scalar> Tape<T> {
    /// Broadcasting sum of equal-rank tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = binary(self, "add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = binary(self, "sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    /// Broadcasting elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = binary(self, "mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let v = self.value(a).map(|x| x * k);
        self.push(v, Op::Scale(a, k), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.abs());
        self.push(v, Op::Abs(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > T::ZERO { x } else { T::ZERO });
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a), &[a])
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::SumAll(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::from_usize(self.value(a).numel().max(1));
        let s = self.sum(a);
        self.scale(s, T::ONE / n)
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("sum_axis", alloc::format!("axis {axis} for shape {shape:?}")));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.data(a);
        let mut out = vec![T::ZERO; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let base = (o * n + k) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        let mut oshape = shape;
        oshape[axis] = 1;
        let v = Tensor::new(oshape, out)?;
        Ok(self.push(v, Op::SumAxis(a, axis), &[a]))
    }
}
