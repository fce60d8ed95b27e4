use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arch::{self, Dims, GraphSink};
use super::config::{InceptionBlockConfig, NetworkConfig};
use super::{Model, ParamStore, TruncGaussSpec};
use crate::autograd::{sigmoid, Graph, Mode, Var};
use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

/// Parameter names with this prefix belong to the classification head.
pub const HEAD_PREFIX: &str = "head/";

pub struct NetForward {
    pub logits: Var,
    pub taps: BTreeMap<String, Var>,
    /// Graph handles of every parameter, by name.
    pub params: BTreeMap<String, Var>,
}

/// An instantiated network: configuration, named parameters and
/// batch-norm running moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Scalar = f32> {
    config: NetworkConfig,
    model: Model<T>,
}

impl<T: Scalar> Network<T> {
    pub fn build<R: Rng + ?Sized>(
        config: NetworkConfig,
        init: &TruncGaussSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let sink = arch::shape_walk(&config)?;
        let model = Model::from_specs(&sink, init, rng)?;
        Ok(Self { config, model })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Model<T> {
        &mut self.model
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.model.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.model.params
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// `(counted layers, trainable parameters)`.
    pub fn count(&self) -> (usize, usize) {
        let layers = arch::shape_walk(&self.config)
            .map(|s| s.layers)
            .expect("a built network has a valid config");
        (layers, self.model.param_count())
    }

    pub fn is_head_param(name: &str) -> bool {
        name.starts_with(HEAD_PREFIX)
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            model: self.model.cast(),
        }
    }

    /// Records a forward pass of an `[N, H, W, C]` input. Parameters require
    /// gradients in train mode.
    pub fn forward(
        &mut self,
        g: &mut Graph<T>,
        input: Var,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<NetForward> {
        self.forward_with(g, input, mode, rng, BTreeMap::new(), mode == Mode::Train)
    }

    /// Forward pass with some parameters already bound to graph leaves.
    pub fn forward_with(
        &mut self,
        g: &mut Graph<T>,
        input: Var,
        mode: Mode,
        rng: &mut dyn RngCore,
        bound: BTreeMap<String, Var>,
        requires_grad: bool,
    ) -> Result<NetForward> {
        let (_, h, w, c) = g.value(input).dims4()?;
        if [h, w, c] != self.config.input {
            return Err(shape_err!(
                "network {} expects {:?} inputs, got {:?}",
                self.config.name,
                self.config.input,
                g.value(input).shape()
            ));
        }
        let mut sink = GraphSink::new(g, &self.model.params, &mut self.model.bn, mode, rng)
            .with_bound(bound)
            .requires_grad(requires_grad);
        let walked = arch::walk_network(&mut sink, &self.config, &input)?;
        Ok(NetForward {
            logits: walked.logits,
            taps: walked.taps,
            params: sink.into_bound(),
        })
    }

    /// Inference-mode logits for a batch; leaves the network untouched.
    pub fn logits(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut bn = self.model.bn.clone();
        let mut g = Graph::new();
        let x = g.constant(images.clone())?;
        // Dropout is the only consumer and is inactive in inference.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut sink = GraphSink::new(&mut g, &self.model.params, &mut bn, Mode::Infer, &mut rng)
            .requires_grad(false);
        let walked = arch::walk_network(&mut sink, &self.config, &x)?;
        Ok(g.value(walked.logits).clone())
    }

    /// Per-class sigmoid confidences, `[N, classes]`.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.logits(images)?.map(sigmoid))
    }
}

/// A stand-alone residual-inception block with its own parameters.
#[derive(Debug, Clone)]
pub struct InceptionBlock<T: Scalar = f32> {
    pub config: InceptionBlockConfig,
    pub model: Model<T>,
}

impl<T: Scalar> InceptionBlock<T> {
    pub fn new<R: Rng + ?Sized>(
        config: InceptionBlockConfig,
        height: usize,
        width: usize,
        init: &TruncGaussSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let sink = arch::block_specs(&config, height, width)?;
        let model = Model::from_specs(&sink, init, rng)?;
        Ok(Self { config, model })
    }

    pub fn param_count(&self) -> usize {
        self.model.param_count()
    }

    /// Records the block; returns its output and the parameter handles.
    pub fn forward(
        &mut self,
        g: &mut Graph<T>,
        x: Var,
        mode: Mode,
        bound: BTreeMap<String, Var>,
    ) -> Result<(Var, BTreeMap<String, Var>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut sink = GraphSink::new(g, &self.model.params, &mut self.model.bn, mode, &mut rng)
            .with_bound(bound);
        let y = arch::residual_inception_block(&mut sink, "block", &x, &self.config)?;
        Ok((y, sink.into_bound()))
    }
}

/// Stand-alone partial attention with projections for fixed shapes.
#[derive(Debug, Clone)]
pub struct PartialAttention<T: Scalar = f32> {
    pub sources: Vec<(String, Dims)>,
    pub target: Dims,
    pub model: Model<T>,
}

impl<T: Scalar> PartialAttention<T> {
    /// `sources` and `target` are `[h, w, c]` without the batch axis.
    pub fn new<R: Rng + ?Sized>(
        sources: Vec<(String, Dims)>,
        target: Dims,
        init: &TruncGaussSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let sink = arch::attention_specs(&sources, &target)?;
        let model = Model::from_specs(&sink, init, rng)?;
        Ok(Self {
            sources,
            target,
            model,
        })
    }

    /// Names of the sources that received a projection.
    pub fn admitted(&self) -> Vec<&str> {
        self.sources
            .iter()
            .map(|(id, _)| id.as_str())
            .filter(|id| self.model.params.contains_key(&format!("attn/{id}/proj/kernel")))
            .collect()
    }

    pub fn forward(
        &mut self,
        g: &mut Graph<T>,
        encoder: &[Var],
        target: Var,
        bound: BTreeMap<String, Var>,
    ) -> Result<(Var, BTreeMap<String, Var>)> {
        if encoder.len() != self.sources.len() {
            return Err(shape_err!(
                "{} encoder maps for {} sources",
                encoder.len(),
                self.sources.len()
            ));
        }
        let batch = g.value(target).shape()[0];
        let mut named = Vec::with_capacity(encoder.len());
        for ((id, dims), &v) in self.sources.iter().zip(encoder) {
            let t = g.value(v);
            if arch::tensor_dims(t)? != *dims || t.shape()[0] != batch {
                return Err(shape_err!("encoder map {id} has shape {:?}", t.shape()));
            }
            named.push((id.clone(), v));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut sink = GraphSink::new(g, &self.model.params, &mut self.model.bn, Mode::Train, &mut rng)
            .with_bound(bound);
        let y = arch::partial_attention(&mut sink, "attn", &named, &target)?;
        Ok((y, sink.into_bound()))
    }
}
