//! Matrix products and layout operations (reshape, permute, concat, narrow).

use alloc::vec;
use alloc::vec::Vec;

use super::elementwise::split_axis;
use super::{GradSink, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, strides, Tensor};

/// `(batch, m, k, n)` for `a @ b` (or `a @ b^T`), rank 2 or batched rank 3.
fn matmul_dims(a: &[usize], b: &[usize], trans_b: bool) -> Result<(usize, usize, usize, usize)> {
    let err = || {
        Error::shape(
            "matmul",
            alloc::format!("incompatible shapes {:?} and {:?} (trans_b={})", a, b, trans_b),
        )
    };
    let (batch, a2, b2) = match (a.len(), b.len()) {
        (2, 2) => (1, a, b),
        (3, 3) if a[0] == b[0] => (a[0], &a[1..], &b[1..]),
        _ => return Err(err()),
    };
    let (m, k) = (a2[0], a2[1]);
    let (kb, n) = if trans_b { (b2[1], b2[0]) } else { (b2[0], b2[1]) };
    if k != kb {
        return Err(err());
    }
    Ok((batch, m, k, n))
}

pub(super) fn matmul_backward<T: Scalar>(
    sink: &mut GradSink<'_, T>,
    a: Var,
    b: Var,
    trans_b: bool,
    g: &[T],
) {
    let (ta, tb) = (sink.value(a), sink.value(b));
    let (batch, m, k, n) = matmul_dims(ta.shape(), tb.shape(), trans_b).expect("checked in forward");
    let (ad, bd) = (ta.data(), tb.data());
    if sink.wants(a) {
        sink.accumulate(a, |da| {
            for bt in 0..batch {
                let (ao, bo, go) = (bt * m * k, bt * k * n, bt * m * n);
                for i in 0..m {
                    let grow = &g[go + i * n..go + (i + 1) * n];
                    let drow = &mut da[ao + i * k..ao + (i + 1) * k];
                    if trans_b {
                        // b is [n, k]
                        for (j, &gv) in grow.iter().enumerate() {
                            let brow = &bd[bo + j * k..bo + (j + 1) * k];
                            for (d, &bv) in drow.iter_mut().zip(brow) {
                                *d += gv * bv;
                            }
                        }
                    } else {
                        for (kk, d) in drow.iter_mut().enumerate() {
                            let brow = &bd[bo + kk * n..bo + (kk + 1) * n];
                            let mut acc = T::ZERO;
                            for (&gv, &bv) in grow.iter().zip(brow) {
                                acc += gv * bv;
                            }
                            *d += acc;
                        }
                    }
                }
            }
        });
    }
    if sink.wants(b) {
        sink.accumulate(b, |db| {
            for bt in 0..batch {
                let (ao, bo, go) = (bt * m * k, bt * k * n, bt * m * n);
                for i in 0..m {
                    let grow = &g[go + i * n..go + (i + 1) * n];
                    let arow = &ad[ao + i * k..ao + (i + 1) * k];
                    if trans_b {
                        for (j, &gv) in grow.iter().enumerate() {
                            let drow = &mut db[bo + j * k..bo + (j + 1) * k];
                            for (d, &av) in drow.iter_mut().zip(arow) {
                                *d += gv * av;
                            }
                        }
                    } else {
                        for (kk, &av) in arow.iter().enumerate() {
                            let drow = &mut db[bo + kk * n..bo + (kk + 1) * n];
                            for (d, &gv) in drow.iter_mut().zip(grow) {
                                *d += av * gv;
                            }
                        }
                    }
                }
            }
        });
    }
}

fn permute_index_map(shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let st = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| st[p]).collect();
    (out_shape, src_strides)
}

/// Calls `f(out_flat, src_flat)` for every element of a permuted view.
fn walk_permuted(out_shape: &[usize], src_strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let n = numel(out_shape);
    if n == 0 {
        return;
    }
    let rank = out_shape.len();
    if rank == 0 {
        f(0, 0);
        return;
    }
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for o in 0..n {
        f(o, src);
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

pub(super) fn permute_backward<T: Scalar>(
    sink: &mut GradSink<'_, T>,
    a: Var,
    perm: &[usize],
    g: &[T],
) {
    let (out_shape, src_strides) = permute_index_map(sink.value(a).shape(), perm);
    sink.accumulate(a, |dst| walk_permuted(&out_shape, &src_strides, |o, s| dst[s] += g[o]));
}

pub(super) fn concat_backward<T: Scalar>(
    sink: &mut GradSink<'_, T>,
    inputs: &[Var],
    axis: usize,
    g: &[T],
) {
    let first = sink.value(inputs[0]).shape();
    let outer: usize = first[..axis].iter().product();
    let inner: usize = first[axis + 1..].iter().product();
    let total: usize = inputs.iter().map(|&v| sink.value(v).shape()[axis]).sum();
    let mut offset = 0;
    for &v in inputs {
        let n = sink.value(v).shape()[axis];
        sink.accumulate(v, |dst| {
            for o in 0..outer {
                let src = &g[(o * total + offset) * inner..(o * total + offset + n) * inner];
                for (d, &s) in dst[o * n * inner..(o + 1) * n * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        });
        offset += n;
    }
}

pub(super) fn narrow_backward<T: Scalar>(
    sink: &mut GradSink<'_, T>,
    x: Var,
    axis: usize,
    start: usize,
    out: &Tensor<T>,
    g: &[T],
) {
    let (outer, total, inner) = split_axis(sink.value(x).shape(), axis);
    let len = out.shape()[axis];
    sink.accumulate(x, |dst| {
        for o in 0..outer {
            let d = &mut dst[(o * total + start) * inner..(o * total + start + len) * inner];
            for (dv, &gv) in d.iter_mut().zip(&g[o * len * inner..(o + 1) * len * inner]) {
                *dv += gv;
            }
        }
    });
}

impl<T: Scalar> Tape<T> {
    /// `a @ b` for rank-2 operands or batched rank-3 operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a @ b^T` over the last two axes.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (batch, m, k, n) = matmul_dims(ta.shape(), tb.shape(), trans_b)?;
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![T::ZERO; batch * m * n];
        for bt in 0..batch {
            let (ao, bo, oo) = (bt * m * k, bt * k * n, bt * m * n);
            for i in 0..m {
                let arow = &ad[ao + i * k..ao + (i + 1) * k];
                let orow = &mut out[oo + i * n..oo + (i + 1) * n];
                if trans_b {
                    for (j, o) in orow.iter_mut().enumerate() {
                        let brow = &bd[bo + j * k..bo + (j + 1) * k];
                        let mut acc = T::ZERO;
                        for (&x, &y) in arow.iter().zip(brow) {
                            acc += x * y;
                        }
                        *o = acc;
                    }
                } else {
                    for (kk, &av) in arow.iter().enumerate() {
                        let brow = &bd[bo + kk * n..bo + (kk + 1) * n];
                        for (o, &bv) in orow.iter_mut().zip(brow) {
                            *o += av * bv;
                        }
                    }
                }
            }
        }
        let shape = if ta.rank() == 2 {
            vec![m, n]
        } else {
            vec![batch, m, n]
        };
        let v = Tensor::new(shape, out)?;
        Ok(self.push(v, Op::Matmul { a, b, trans_b }, &[a, b]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if numel(shape) != t.numel() {
            return Err(Error::shape(
                "reshape",
                alloc::format!("cannot reshape {:?} into {:?}", t.shape(), shape),
            ));
        }
        let v = Tensor::new(shape.to_vec(), t.data().to_vec())?;
        Ok(self.push(v, Op::Reshape(a), &[a]))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a);
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || core::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape(
                "permute",
                alloc::format!("{:?} is not a permutation of {} axes", perm, shape.len()),
            ));
        }
        let (out_shape, src_strides) = permute_index_map(shape, perm);
        let src = self.data(a);
        let mut out = vec![T::ZERO; src.len()];
        walk_permuted(&out_shape, &src_strides, |o, s| out[o] = src[s]);
        let v = Tensor::new(out_shape, out)?;
        Ok(self.push(v, Op::Permute(a, perm.to_vec()), &[a]))
    }

    /// Swaps two axes.
    pub fn transpose(&mut self, a: Var, d0: usize, d1: usize) -> Result<Var> {
        let rank = self.shape(a).len();
        if d0 >= rank || d1 >= rank {
            return Err(Error::shape("transpose", alloc::format!("axes ({d0}, {d1}) for rank {rank}")));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(d0, d1);
        self.permute(a, &perm)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(Error::Empty("concat"));
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", alloc::format!("axis {axis} for shape {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::shape(
                    "concat",
                    alloc::format!("{:?} does not match {:?} off axis {}", s, base, axis),
                ));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let n = self.shape(v)[axis];
                out.extend_from_slice(&self.data(v)[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let v = Tensor::new(shape, out)?;
        Ok(self.push(v, Op::Concat(inputs.to_vec(), axis), inputs))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape(
                "narrow",
                alloc::format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, total, inner) = split_axis(&shape, axis);
        let src = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * total + start) * inner..(o * total + start + len) * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        let v = Tensor::new(oshape, out)?;
        Ok(self.push(v, Op::Narrow { x, axis, start }, &[x]))
    }

    /// Splits along `axis` into consecutive pieces of the given sizes.
    pub fn split(&mut self, x: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let extent = self.shape(x).get(axis).copied().unwrap_or(0);
        if sizes.iter().sum::<usize>() != extent {
            return Err(Error::shape(
                "split",
                alloc::format!("sizes {sizes:?} do not cover extent {extent} on axis {axis}"),
            ));
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&n| {
                let v = self.narrow(x, axis, start, n);
                start += n;
                v
            })
            .collect()
    }
}
