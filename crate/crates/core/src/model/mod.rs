//! The CoT-MISR network.
//!
//! ```text
//! frames [B,K,C,H,W]
//!   -> median reference            [B,C,H,W]
//!   -> pair each frame with it     [B,K,2C,H,W]
//!   -> shallow encoder             [B,Ce,H,W]
//!   -> CoT units (LRCA / T-Block)  [B,Ce,H,W]
//!   -> conv + pixel shuffle        [B,C,rH,rW]
//! ```
//!
//! [`CotMisr`] only holds the layout (parameter names, shapes, groups and
//! which stage uses which tensor). Parameter values live in [`ModelParams`]
//! and are bound onto a [`Tape`] for each forward pass.

pub mod arch;
pub mod config;
mod encoder;
mod layers;
mod lrca;
pub mod params;
mod reconstruct;
mod tblock;


use alloc::vec::Vec;

use rand_core::RngCore;

pub use arch::{Architecture, BlockKind};
pub use config::{CotConfig, LrcaConfig, TBlockConfig};
pub use encoder::{median_reference, pair_with_reference};
pub use params::{count_specs, Group, Init, ModelParams, Param, ParamSpec};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use encoder::ShallowEncoder;
use lrca::Lrca;
use params::Layout;
use reconstruct::Reconstruction;
use tblock::TBlock;

/// Forward-pass mode. Dropout is only active in `Train`.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut Rng),
}

#[derive(Debug, Clone)]
pub(crate) enum Block {
    Lrca(Lrca),
    TBlock(TBlock),
}

/// Output of [`CotMisr::forward`].
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub sr: Var,
    /// Softmax attention maps `[B*heads, L, L]`, one per encoder layer, in order.
    pub attention: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct CotMisr {
    cfg: CotConfig,
    specs: Vec<ParamSpec>,
    shallow: ShallowEncoder,
    blocks: Vec<Block>,
    recon: Reconstruction,
}

impl CotMisr {
    pub fn new(cfg: CotConfig) -> Result<Self> {
        cfg.validate()?;
        let mut layout = Layout::default();
        let shallow = ShallowEncoder::new(&mut layout, cfg.k, cfg.c_in, cfg.c_e);
        let blocks = cfg
            .arch
            .blocks()
            .into_iter()
            .enumerate()
            .map(|(i, kind)| match kind {
                BlockKind::Lrca => Block::Lrca(Lrca::new(&mut layout, &alloc::format!("cot.{i}.lrca"), &cfg)),
                BlockKind::TBlock => Block::TBlock(TBlock::new(&mut layout, &alloc::format!("cot.{i}.tblock"), &cfg)),
            })
            .collect();
        let recon = Reconstruction::new(&mut layout, cfg.c_e, cfg.c_in, cfg.upscale);
        Ok(Self {
            cfg,
            specs: layout.specs,
            shallow,
            blocks,
            recon,
        })
    }

    pub fn config(&self) -> &CotConfig {
        &self.cfg
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    /// Position of a named parameter in the layout (and in bound `Var` lists).
    pub fn param_index(&self, name: &str) -> usize {
        self.specs
            .iter()
            .position(|s| s.name == name)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    pub fn block_kinds(&self) -> Vec<BlockKind> {
        self.blocks
            .iter()
            .map(|b| match b {
                Block::Lrca(_) => BlockKind::Lrca,
                Block::TBlock(_) => BlockKind::TBlock,
            })
            .collect()
    }

    /// Exact scalar parameter count, optionally for one group.
    pub fn count_params(&self, group: Option<Group>) -> usize {
        count_specs(&self.specs, group)
    }

    pub fn init_params<T: Scalar>(&self, rng: &mut impl RngCore) -> ModelParams<T> {
        ModelParams::init(&self.specs, rng)
    }

    /// Checks that `params` matches this layout (names, order, shapes).
    pub fn check_params<T: Scalar>(&self, params: &ModelParams<T>) -> Result<()> {
        let ok = params.len() == self.specs.len()
            && params
                .iter()
                .zip(&self.specs)
                .all(|(p, s)| p.name == s.name && p.value.shape() == s.shape.as_slice() && p.group == s.group);
        if ok {
            Ok(())
        } else {
            Err(Error::Config("parameters do not match the model layout".into()))
        }
    }

    fn check_frames(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 5 || shape[2] != self.cfg.c_in {
            return Err(Error::shape(
                "forward",
                alloc::format!("expected frames [B, K, {}, H, W], got {shape:?}", self.cfg.c_in),
            ));
        }
        if shape[1] != self.cfg.k {
            return Err(Error::shape(
                "forward",
                alloc::format!("got {} frames, model is configured for {}", shape[1], self.cfg.k),
            ));
        }
        Ok(())
    }

    /// Shallow feature extraction from frame/reference pairs `[B, K, 2C, H, W]`.
    pub fn shallow_encode<T: Scalar>(&self, tape: &mut Tape<T>, vars: &[Var], pairs: Var) -> Result<Var> {
        self.shallow.forward(tape, vars, pairs)
    }

    /// Applies one CoT unit by index.
    pub fn block_forward<T: Scalar>(
        &self,
        index: usize,
        tape: &mut Tape<T>,
        vars: &[Var],
        x: Var,
        mode: &mut Mode<'_>,
        attention: &mut Vec<Var>,
    ) -> Result<Var> {
        match &self.blocks[index] {
            Block::Lrca(b) => b.forward(tape, vars, x),
            Block::TBlock(b) => b.forward(tape, vars, x, mode, attention),
        }
    }

    /// All CoT units, left to right.
    pub fn cot_forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        x: Var,
        mode: &mut Mode<'_>,
        attention: &mut Vec<Var>,
    ) -> Result<Var> {
        let mut h = x;
        for i in 0..self.blocks.len() {
            h = self.block_forward(i, tape, vars, h, mode, attention)?;
        }
        Ok(h)
    }

    pub fn reconstruct<T: Scalar>(&self, tape: &mut Tape<T>, vars: &[Var], feat: Var) -> Result<Var> {
        self.recon.forward(tape, vars, feat)
    }

    /// Full pipeline on frames `[B, K, C, H, W]` producing `[B, C, rH, rW]`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, vars: &[Var], frames: Var, mode: &mut Mode<'_>) -> Result<ForwardOutput> {
        self.check_frames(tape.shape(frames))?;
        let reference = median_reference(tape, frames)?;
        let pairs = pair_with_reference(tape, frames, reference)?;
        let br = self.shallow_encode(tape, vars, pairs)?;
        let mut attention = Vec::new();
        let feat = self.cot_forward(tape, vars, br, mode, &mut attention)?;
        let sr = self.reconstruct(tape, vars, feat)?;
        Ok(ForwardOutput { sr, attention })
    }

    /// Evaluation-mode forward without gradient tracking.
    pub fn infer<T: Scalar>(&self, params: &ModelParams<T>, frames: Tensor<T>) -> Result<Tensor<T>> {
        self.check_params(params)?;
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, false);
        let x = tape.constant(frames);
        let out = self.forward(&mut tape, &vars, x, &mut Mode::Eval)?;
        Ok(tape.value(out.sr).clone())
    }
}
