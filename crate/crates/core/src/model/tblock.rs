//! T-Block: pre-norm transformer encoder layers over the `H*W` spatial tokens.
//!
//! `[B, C, H, W]` is rearranged to a token sequence `[H*W, B, C]` (stored as
//! `[H*W*B, C]` rows for the projections), passed through the layers, and
//! rearranged back. With zero layers the two rearrangements cancel exactly.

use alloc::format;
use alloc::vec::Vec;

use super::config::CotConfig;
use super::layers::{join, LayerNorm, Linear};
use super::params::{Group, Init, Layout};
use super::Mode;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub(crate) struct EncoderLayer {
    pub norm1: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub(crate) struct TBlock {
    pub pos_embed: Option<(usize, usize)>,
    pub layers: Vec<EncoderLayer>,
    pub heads: usize,
    pub dropout: f64,
    pub eps: f64,
}

impl TBlock {
    pub fn new(layout: &mut Layout, prefix: &str, cfg: &CotConfig) -> Self {
        let (e, t) = (cfg.c_e, &cfg.tblock);
        let pos_embed = (t.pos_embed > 0).then(|| {
            let idx = layout.add(join(prefix, "pos_embed"), &[t.pos_embed, t.pos_embed, e], Group::Cot, Init::Zeros);
            (idx, t.pos_embed)
        });
        let layers = (0..t.layers)
            .map(|i| {
                let p = format!("{prefix}.layer{i}");
                EncoderLayer {
                    norm1: LayerNorm::new(layout, &join(&p, "norm1"), e, Group::Cot),
                    q: Linear::new(layout, &join(&p, "attn.q"), e, e, Group::Cot),
                    k: Linear::new(layout, &join(&p, "attn.k"), e, e, Group::Cot),
                    v: Linear::new(layout, &join(&p, "attn.v"), e, e, Group::Cot),
                    out: Linear::new(layout, &join(&p, "attn.out"), e, e, Group::Cot),
                    norm2: LayerNorm::new(layout, &join(&p, "norm2"), e, Group::Cot),
                    fc1: Linear::new(layout, &join(&p, "ff.fc1"), e, t.ff_dim, Group::Cot),
                    fc2: Linear::new(layout, &join(&p, "ff.fc2"), t.ff_dim, e, Group::Cot),
                }
            })
            .collect();
        Self {
            pos_embed,
            layers,
            heads: t.heads,
            dropout: t.dropout,
            eps: cfg.ln_eps,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        x: Var,
        mode: &mut Mode<'_>,
        attention: &mut Vec<Var>,
    ) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("tblock", format!("expected [B,C,H,W], got {s:?}")));
        }
        let (b, e, h, w) = (s[0], s[1], s[2], s[3]);
        if e % self.heads != 0 {
            return Err(Error::shape("tblock", format!("{e} channels not divisible by {} heads", self.heads)));
        }
        let l = h * w;

        // reshape1: [B, C, H, W] -> [H, W, B, C] -> [L, B, C]
        let seq = tape.permute(x, &[2, 3, 0, 1])?;
        let mut seq = tape.reshape(seq, &[l, b, e])?;
        if let Some((idx, side)) = self.pos_embed {
            if h > side || w > side {
                return Err(Error::shape(
                    "tblock",
                    format!("{h}x{w} tokens exceed the {side}x{side} positional embedding"),
                ));
            }
            let pe = tape.narrow(vars[idx], 0, 0, h)?;
            let pe = tape.narrow(pe, 1, 0, w)?;
            let pe = tape.reshape(pe, &[l, 1, e])?;
            seq = tape.add(seq, pe)?;
        }
        let mut rows = tape.reshape(seq, &[l * b, e])?;
        for layer in &self.layers {
            rows = self.layer_forward(layer, tape, vars, rows, (l, b, e), mode, attention)?;
        }
        // reshape2: [L*B, C] -> [H, W, B, C] -> [B, C, H, W]
        let grid = tape.reshape(rows, &[h, w, b, e])?;
        tape.permute(grid, &[2, 3, 0, 1])
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_forward<T: Scalar>(
        &self,
        layer: &EncoderLayer,
        tape: &mut Tape<T>,
        vars: &[Var],
        x: Var,
        (l, b, e): (usize, usize, usize),
        mode: &mut Mode<'_>,
        attention: &mut Vec<Var>,
    ) -> Result<Var> {
        let heads = self.heads;
        let dh = e / heads;

        let n = layer.norm1.apply(tape, vars, x, self.eps)?;
        // [L*B, E] -> [L, B, heads, dh] -> [B, heads, L, dh] -> [B*heads, L, dh]
        let split = |t: &mut Tape<T>, v: Var| -> Result<Var> {
            let v = t.reshape(v, &[l, b, heads, dh])?;
            let v = t.permute(v, &[1, 2, 0, 3])?;
            t.reshape(v, &[b * heads, l, dh])
        };
        let q = layer.q.apply(tape, vars, n)?;
        let q = split(tape, q)?;
        let k = layer.k.apply(tape, vars, n)?;
        let k = split(tape, k)?;
        let v = layer.v.apply(tape, vars, n)?;
        let v = split(tape, v)?;

        let scores = tape.matmul_nt(q, k)?;
        let scores = tape.scale(scores, T::from_f64(1.0 / libm::sqrt(dh as f64)));
        let attn = tape.softmax(scores, 2)?;
        attention.push(attn);
        let attn = self.dropout(tape, attn, mode);
        let ctx = tape.matmul(attn, v)?;
        let ctx = tape.reshape(ctx, &[b, heads, l, dh])?;
        let ctx = tape.permute(ctx, &[2, 0, 1, 3])?;
        let ctx = tape.reshape(ctx, &[l * b, e])?;
        let o = layer.out.apply(tape, vars, ctx)?;
        let o = self.dropout(tape, o, mode);
        let x = tape.add(x, o)?;

        let n = layer.norm2.apply(tape, vars, x, self.eps)?;
        let f = layer.fc1.apply(tape, vars, n)?;
        let f = tape.relu(f);
        let f = layer.fc2.apply(tape, vars, f)?;
        let f = self.dropout(tape, f, mode);
        tape.add(x, f)
    }

    fn dropout<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, mode: &mut Mode<'_>) -> Var {
        let Mode::Train(rng) = mode else {
            return x;
        };
        if self.dropout <= 0.0 {
            return x;
        }
        let keep = 1.0 - self.dropout;
        let scale = T::from_f64(1.0 / keep);
        let shape = tape.shape(x).to_vec();
        let mask = Tensor::from_fn(shape, |_| if rng::unit(&mut **rng) < keep { scale } else { T::ZERO });
        let m = tape.constant(mask);
        tape.mul(x, m).expect("mask has the input's shape")
    }
}
