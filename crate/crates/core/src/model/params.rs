//! Named parameter tensors, their groups and initialization.

use alloc::string::String;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

/// Learning-rate group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    /// Shallow feature extraction and HR reconstruction.
    Encoder,
    /// Every CoT unit (LRCA and T-Block).
    Cot,
}

impl Group {
    pub const ALL: [Group; 2] = [Group::Encoder, Group::Cot];

    pub fn name(self) -> &'static str {
        match self {
            Group::Encoder => "encoder",
            Group::Cot => "cot",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `±1 / sqrt(fan_in)`.
    KaimingUniform { fan_in: usize },
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    XavierUniform { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: Group,
    pub init: Init,
}

/// Builder used by the network layout to register parameters in order.
#[derive(Debug, Default)]
pub(crate) struct Layout {
    pub specs: Vec<ParamSpec>,
}

impl Layout {
    pub fn add(&mut self, name: String, shape: &[usize], group: Group, init: Init) -> usize {
        debug_assert!(self.specs.iter().all(|s| s.name != name), "duplicate parameter {name}");
        self.specs.push(ParamSpec {
            name,
            shape: shape.to_vec(),
            group,
            init,
        });
        self.specs.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub group: Group,
    pub value: Tensor<T>,
}

/// Ordered collection of learnable tensors. Names are unique and every
/// parameter belongs to exactly one [`Group`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ModelParams<T> {
    /// Draws every tensor from its [`Init`] rule, in layout order.
    pub fn init(specs: &[ParamSpec], rng: &mut impl RngCore) -> Self {
        let params = specs
            .iter()
            .map(|spec| {
                let value = match spec.init {
                    Init::Zeros => Tensor::zeros(spec.shape.clone()),
                    Init::Ones => Tensor::full(spec.shape.clone(), T::ONE),
                    // gain sqrt(2 / (1 + a^2)) with a = sqrt(5), the usual conv default
                    Init::KaimingUniform { fan_in } => {
                        let bound = libm::sqrt(1.0 / fan_in as f64);
                        Tensor::from_fn(spec.shape.clone(), |_| T::from_f64(rng::uniform(rng, -bound, bound)))
                    }
                    Init::XavierUniform { fan_in, fan_out } => {
                        let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
                        Tensor::from_fn(spec.shape.clone(), |_| T::from_f64(rng::uniform(rng, -bound, bound)))
                    }
                };
                Param {
                    name: spec.name.clone(),
                    group: spec.group,
                    value,
                }
            })
            .collect();
        Self { params }
    }

    /// Builds a collection from explicit tensors, checking them against `specs`.
    pub fn from_tensors(specs: &[ParamSpec], tensors: Vec<(String, Tensor<T>)>) -> Result<Self> {
        if specs.len() != tensors.len() {
            return Err(Error::Config(alloc::format!(
                "expected {} parameter tensors, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        let params = specs
            .iter()
            .zip(tensors)
            .map(|(spec, (name, value))| {
                if spec.name != name || spec.shape != value.shape() {
                    return Err(Error::Config(alloc::format!(
                        "parameter mismatch: expected {} {:?}, got {} {:?}",
                        spec.name,
                        spec.shape,
                        name,
                        value.shape()
                    )));
                }
                Ok(Param {
                    name,
                    group: spec.group,
                    value,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { params })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Scalar count, optionally restricted to one group.
    pub fn count(&self, group: Option<Group>) -> usize {
        self.params
            .iter()
            .filter(|p| group.is_none_or(|g| p.group == g))
            .map(|p| p.value.numel())
            .sum()
    }

    /// Registers every tensor on `tape`, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.leaf(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    group: p.group,
                    value: p.value.cast(),
                })
                .collect(),
        }
    }
}

/// Scalar count from a layout, without allocating tensors.
pub fn count_specs(specs: &[ParamSpec], group: Option<Group>) -> usize {
    specs
        .iter()
        .filter(|s| group.is_none_or(|g| s.group == g))
        .map(|s| numel(&s.shape))
        .sum()
}
