//! HR reconstruction: 3x3 convolution to `C * r^2` channels, then pixel shuffle.

use super::layers::Conv;
use super::params::{Group, Layout};
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub(crate) struct Reconstruction {
    pub conv: Conv,
    pub upscale: usize,
}

impl Reconstruction {
    pub fn new(layout: &mut Layout, c_e: usize, c_out: usize, upscale: usize) -> Self {
        Self {
            conv: Conv::new(layout, "encoder.reconstruct.conv", c_e, c_out * upscale * upscale, 3, 1, Group::Encoder),
            upscale,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, vars: &[Var], feat: Var) -> Result<Var> {
        let y = self.conv.apply(tape, vars, feat)?;
        tape.pixel_shuffle(y, self.upscale)
    }
}
