//! Reference frame, frame pairing and shallow feature extraction.

use alloc::vec;
use alloc::vec::Vec;

use super::layers::Conv;
use super::params::{Group, Layout};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Pixel-wise median over the frame axis: `[B, K, C, H, W] -> [B, C, H, W]`.
pub fn median_reference<T: Scalar>(tape: &mut Tape<T>, frames: Var) -> Result<Var> {
    let shape = tape.shape(frames);
    if shape.len() != 5 {
        return Err(Error::shape("median_reference", alloc::format!("expected [B,K,C,H,W], got {shape:?}")));
    }
    if shape[1] == 0 {
        return Err(Error::Empty("median_reference"));
    }
    tape.median(frames, 1)
}

/// Builds `G_i = [ref, frame_i]` for every frame: `[B, K, 2C, H, W]`, reference channels first.
pub fn pair_with_reference<T: Scalar>(tape: &mut Tape<T>, frames: Var, reference: Var) -> Result<Var> {
    let fs = tape.shape(frames).to_vec();
    let rs = tape.shape(reference).to_vec();
    if fs.len() != 5 || rs.len() != 4 || fs[0] != rs[0] || fs[2..] != rs[1..] {
        return Err(Error::shape(
            "pair_with_reference",
            alloc::format!("frames {fs:?} and reference {rs:?} disagree"),
        ));
    }
    let r = tape.reshape(reference, &[rs[0], 1, rs[1], rs[2], rs[3]])?;
    let copies: Vec<Var> = vec![r; fs[1]];
    let tiled = tape.concat(&copies, 1)?;
    tape.concat(&[tiled, frames], 2)
}

/// Frame axis folded into channels, then two 3x3 convolutions with a ReLU between.
#[derive(Debug, Clone)]
pub(crate) struct ShallowEncoder {
    pub k: usize,
    pub c_pair: usize,
    pub conv1: Conv,
    pub conv2: Conv,
}

impl ShallowEncoder {
    pub fn new(layout: &mut Layout, k: usize, c_in: usize, c_e: usize) -> Self {
        let c_pair = 2 * c_in;
        Self {
            k,
            c_pair,
            conv1: Conv::new(layout, "encoder.shallow.conv1", k * c_pair, c_e, 3, 1, Group::Encoder),
            conv2: Conv::new(layout, "encoder.shallow.conv2", c_e, c_e, 3, 1, Group::Encoder),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, vars: &[Var], pairs: Var) -> Result<Var> {
        let s = tape.shape(pairs).to_vec();
        if s.len() != 5 || s[2] != self.c_pair {
            return Err(Error::shape(
                "shallow_encode",
                alloc::format!("expected [B, K, {}, H, W], got {s:?}", self.c_pair),
            ));
        }
        if s[1] != self.k {
            return Err(Error::shape(
                "shallow_encode",
                alloc::format!("got {} frames, model is configured for {}", s[1], self.k),
            ));
        }
        let folded = tape.reshape(pairs, &[s[0], s[1] * s[2], s[3], s[4]])?;
        let h = self.conv1.apply(tape, vars, folded)?;
        let h = tape.relu(h);
        self.conv2.apply(tape, vars, h)
    }
}
