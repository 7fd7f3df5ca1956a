//! Parameterized building blocks shared by the network stages.

use alloc::format;
use alloc::string::String;

use super::params::{Group, Init, Layout};
use crate::autodiff::{Conv2dArgs, Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub(crate) struct Conv {
    pub weight: usize,
    pub bias: usize,
    pub args: Conv2dArgs,
}

impl Conv {
    /// Same-padding, stride-1 convolution `cin -> cout` with `groups` groups.
    pub fn new(layout: &mut Layout, prefix: &str, cin: usize, cout: usize, kernel: usize, groups: usize, group: Group) -> Self {
        let cin_g = cin / groups;
        let fan_in = cin_g * kernel * kernel;
        Self {
            weight: layout.add(
                format!("{prefix}.weight"),
                &[cout, cin_g, kernel, kernel],
                group,
                Init::KaimingUniform { fan_in },
            ),
            bias: layout.add(format!("{prefix}.bias"), &[cout], group, Init::Zeros),
            args: Conv2dArgs {
                groups,
                ..Conv2dArgs::same(kernel)
            },
        }
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<Var> {
        tape.conv2d(x, vars[self.weight], Some(vars[self.bias]), self.args)
    }
}

/// Affine map on the last axis of `[N, in]` rows; weight stored `[in, out]`.
#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub out: usize,
}

impl Linear {
    pub fn new(layout: &mut Layout, prefix: &str, fan_in: usize, fan_out: usize, group: Group) -> Self {
        Self {
            weight: layout.add(
                format!("{prefix}.weight"),
                &[fan_in, fan_out],
                group,
                Init::XavierUniform { fan_in, fan_out },
            ),
            bias: layout.add(format!("{prefix}.bias"), &[fan_out], group, Init::Zeros),
            out: fan_out,
        }
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<Var> {
        let y = tape.matmul(x, vars[self.weight])?;
        let b = tape.reshape(vars[self.bias], &[1, self.out])?;
        tape.add(y, b)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerNorm {
    pub gamma: usize,
    pub beta: usize,
}

impl LayerNorm {
    pub fn new(layout: &mut Layout, prefix: &str, features: usize, group: Group) -> Self {
        Self {
            gamma: layout.add(format!("{prefix}.weight"), &[features], group, Init::Ones),
            beta: layout.add(format!("{prefix}.bias"), &[features], group, Init::Zeros),
        }
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, vars: &[Var], x: Var, eps: f64) -> Result<Var> {
        tape.layer_norm(x, vars[self.gamma], vars[self.beta], eps)
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    format!("{prefix}.{name}")
}
