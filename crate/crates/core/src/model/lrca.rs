//! Light residual channel attention: `y = CA(SA(x)) + x`.
//!
//! SA is a depthwise-separable spatial gate: a depthwise conv produces
//! features `d`, a pointwise conv reduces them to a single map, and
//! `d * sigmoid(map)` is passed on. CA is the squeeze-excitation style
//! channel gate (pool, reduce, ReLU, expand, sigmoid, rescale). A disabled
//! part is the identity.

use alloc::format;

use super::config::CotConfig;
use super::layers::Conv;
use super::params::{Group, Layout};
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub(crate) struct SpatialAttention {
    pub depthwise: Conv,
    pub pointwise: Conv,
}

#[derive(Debug, Clone)]
pub(crate) struct ChannelAttention {
    pub down: Conv,
    pub up: Conv,
}

#[derive(Debug, Clone)]
pub(crate) struct Lrca {
    pub sa: Option<SpatialAttention>,
    pub ca: Option<ChannelAttention>,
}

impl Lrca {
    pub fn new(layout: &mut Layout, prefix: &str, cfg: &CotConfig) -> Self {
        let (c, l) = (cfg.c_e, &cfg.lrca);
        let sa = l.use_sa.then(|| SpatialAttention {
            depthwise: Conv::new(layout, &format!("{prefix}.sa.depthwise"), c, c, l.sa_kernel, c, Group::Cot),
            pointwise: Conv::new(layout, &format!("{prefix}.sa.pointwise"), c, 1, 1, 1, Group::Cot),
        });
        let ca = l.use_ca.then(|| ChannelAttention {
            down: Conv::new(layout, &format!("{prefix}.ca.down"), c, c / l.ca_reduction, 1, 1, Group::Cot),
            up: Conv::new(layout, &format!("{prefix}.ca.up"), c / l.ca_reduction, c, 1, 1, Group::Cot),
        });
        Self { sa, ca }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        if let Some(sa) = &self.sa {
            let d = sa.depthwise.apply(tape, vars, h)?;
            let map = sa.pointwise.apply(tape, vars, d)?;
            let gate = tape.sigmoid(map);
            h = tape.mul(d, gate)?;
        }
        if let Some(ca) = &self.ca {
            let pooled = tape.global_avg_pool2d(h)?;
            let z = ca.down.apply(tape, vars, pooled)?;
            let z = tape.relu(z);
            let z = ca.up.apply(tape, vars, z)?;
            let gate = tape.sigmoid(z);
            h = tape.mul(h, gate)?;
        }
        tape.add(h, x)
    }
}
