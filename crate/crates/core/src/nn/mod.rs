//! Residual-inception blocks, partial attention and the network builder.
//!
//! Layer counting convention: every convolution and dense layer counts as
//! one layer (including 1×1 projections and the factorized `1×k`/`k×1`
//! pairs, which count as two). Batch normalization, ReLU, pooling,
//! concatenation, addition and dropout are not counted. Trainable
//! parameters are convolution kernels and biases, dense weights and biases,
//! and batch-norm `gamma`/`beta`; running moments are not counted.

pub mod arch;
pub mod config;
mod network;

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

pub use arch::{
    admissible_stride, attention_ratio, count_layers_and_params, partial_attention,
    residual_inception_block, Init, LayerSink, ParamSpec,
};
pub use config::{
    AttentionConfig, BlockSpec, BranchLayer, InceptionBlockConfig, NetworkConfig, StageConfig,
    StemLayer,
};
pub use network::{InceptionBlock, NetForward, Network, PartialAttention};

use crate::autograd::BatchNormState;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub type ParamStore<T = f32> = BTreeMap<String, Tensor<T>>;
pub type BnStore<T = f32> = BTreeMap<String, BatchNormState<T>>;

/// Zero-mean Gaussian truncated at `±bound·std` by redrawing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncGaussSpec {
    pub std: f64,
    pub bound: f64,
}

impl Default for TruncGaussSpec {
    fn default() -> Self {
        Self {
            std: 0.05,
            bound: 2.0,
        }
    }
}

impl TruncGaussSpec {
    pub fn sample<T: Scalar, R: Rng + ?Sized>(&self, shape: &[usize], rng: &mut R) -> Result<Tensor<T>> {
        if !(self.std > 0.0 && self.bound > 0.0) {
            return Err(Error::Config(format!(
                "truncated Gaussian needs positive std and bound, got {self:?}"
            )));
        }
        let normal = Normal::new(0.0, self.std).expect("std is positive");
        let limit = self.bound * self.std;
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| loop {
                let v: f64 = normal.sample(rng);
                if v.abs() <= limit {
                    break T::of(v);
                }
            })
            .collect();
        Tensor::new(shape, data)
    }
}

/// Parameters and batch-norm state of a module.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar = f32> {
    pub params: ParamStore<T>,
    pub bn: BnStore<T>,
}

impl<T: Scalar> Model<T> {
    /// Allocates parameters in spec order, drawing weights from `init`.
    pub fn from_specs<R: Rng + ?Sized>(
        sink: &arch::ShapeSink,
        init: &TruncGaussSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let mut params = ParamStore::new();
        for spec in &sink.params {
            let t = match spec.init {
                Init::TruncNormal => init.sample(&spec.shape, rng)?,
                Init::Zeros => Tensor::zeros(&spec.shape),
                Init::Ones => Tensor::ones(&spec.shape),
            };
            if params.insert(spec.name.clone(), t).is_some() {
                return Err(Error::Config(format!("duplicate parameter name {}", spec.name)));
            }
        }
        let bn = sink
            .batch_norms
            .iter()
            .map(|(name, c)| (name.clone(), BatchNormState::new(*c)))
            .collect();
        Ok(Self { params, bn })
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
            bn: self
                .bn
                .iter()
                .map(|(k, s)| {
                    (
                        k.clone(),
                        BatchNormState {
                            running_mean: s.running_mean.cast(),
                            running_var: s.running_var.cast(),
                            momentum: U::of(s.momentum.as_f64()),
                            epsilon: U::of(s.epsilon.as_f64()),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }
}
