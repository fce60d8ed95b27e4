//! Architecture described once, interpreted twice.
//!
//! Every block is written against [`LayerSink`]. [`ShapeSink`] propagates
//! shapes and collects parameter specs (used for building and counting
//! without allocating), [`GraphSink`] records the real computation on a
//! [`Graph`].

use std::collections::BTreeMap;

use log::{debug, info};
use num_rational::Ratio;
use rand::RngCore;

use super::config::{BranchLayer, InceptionBlockConfig, NetworkConfig, StemLayer};
use super::{BnStore, ParamStore};
use crate::autograd::{BatchNormState, Graph, Mode, Padding, Var};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    TruncNormal,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Interpreter for architecture descriptions.
pub trait LayerSink {
    type Act: Clone;

    /// `(height, width, channels)` of an NHWC activation.
    fn dims(&self, x: &Self::Act) -> (usize, usize, usize);

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        name: &str,
        x: &Self::Act,
        kh: usize,
        kw: usize,
        filters: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self::Act>;
    fn batch_norm(&mut self, name: &str, x: &Self::Act) -> Result<Self::Act>;
    fn relu(&mut self, x: &Self::Act) -> Result<Self::Act>;
    fn maxpool(
        &mut self,
        x: &Self::Act,
        window: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self::Act>;
    fn concat(&mut self, xs: &[Self::Act]) -> Result<Self::Act>;
    fn add(&mut self, a: &Self::Act, b: &Self::Act) -> Result<Self::Act>;
    fn global_avg_pool(&mut self, x: &Self::Act) -> Result<Self::Act>;
    fn dropout(&mut self, x: &Self::Act, rate: f64) -> Result<Self::Act>;
    fn dense(&mut self, name: &str, x: &Self::Act, outputs: usize) -> Result<Self::Act>;
}

/// Shape propagation plus parameter bookkeeping.
#[derive(Debug, Default)]
pub struct ShapeSink {
    pub params: Vec<ParamSpec>,
    pub batch_norms: Vec<(String, usize)>,
    /// Convolution and dense layers seen so far.
    pub layers: usize,
}

impl ShapeSink {
    pub fn trainable_params(&self) -> usize {
        self.params
            .iter()
            .map(|p| p.shape.iter().product::<usize>())
            .sum()
    }

    fn spec(&mut self, name: String, shape: Vec<usize>, init: Init) {
        self.params.push(ParamSpec { name, shape, init });
    }
}

/// Shape of an activation in [`ShapeSink`]: NHWC without the batch axis,
/// or `[features]` after pooling.
pub type Dims = Vec<usize>;

impl LayerSink for ShapeSink {
    type Act = Dims;

    fn dims(&self, x: &Dims) -> (usize, usize, usize) {
        match x.as_slice() {
            [h, w, c] => (*h, *w, *c),
            [c] => (1, 1, *c),
            _ => unreachable!("activation dims are rank 1 or 3"),
        }
    }

    fn conv(
        &mut self,
        name: &str,
        x: &Dims,
        kh: usize,
        kw: usize,
        filters: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Dims> {
        let (h, w, c) = self.dims(x);
        let (oh, _) = crate::autograd::conv::output_extent(h, kh, stride, padding)?;
        let (ow, _) = crate::autograd::conv::output_extent(w, kw, stride, padding)?;
        self.spec(format!("{name}/kernel"), vec![kh, kw, c, filters], Init::TruncNormal);
        self.spec(format!("{name}/bias"), vec![filters], Init::Zeros);
        self.layers += 1;
        Ok(vec![oh, ow, filters])
    }

    fn batch_norm(&mut self, name: &str, x: &Dims) -> Result<Dims> {
        let c = *x.last().expect("non-empty dims");
        self.spec(format!("{name}/gamma"), vec![c], Init::Ones);
        self.spec(format!("{name}/beta"), vec![c], Init::Zeros);
        self.batch_norms.push((name.to_string(), c));
        Ok(x.clone())
    }

    fn relu(&mut self, x: &Dims) -> Result<Dims> {
        Ok(x.clone())
    }

    fn maxpool(&mut self, x: &Dims, window: usize, stride: usize, padding: Padding) -> Result<Dims> {
        let (h, w, c) = self.dims(x);
        let (oh, _) = crate::autograd::conv::output_extent(h, window, stride, padding)?;
        let (ow, _) = crate::autograd::conv::output_extent(w, window, stride, padding)?;
        Ok(vec![oh, ow, c])
    }

    fn concat(&mut self, xs: &[Dims]) -> Result<Dims> {
        let (h, w, _) = self.dims(&xs[0]);
        let mut total = 0;
        for x in xs {
            let (xh, xw, c) = self.dims(x);
            if (xh, xw) != (h, w) {
                return Err(shape_err!("concat of {x:?} with {:?}", xs[0]));
            }
            total += c;
        }
        Ok(vec![h, w, total])
    }

    fn add(&mut self, a: &Dims, b: &Dims) -> Result<Dims> {
        if a != b {
            return Err(shape_err!("add of {a:?} and {b:?}"));
        }
        Ok(a.clone())
    }

    fn global_avg_pool(&mut self, x: &Dims) -> Result<Dims> {
        Ok(vec![self.dims(x).2])
    }

    fn dropout(&mut self, x: &Dims, _rate: f64) -> Result<Dims> {
        Ok(x.clone())
    }

    fn dense(&mut self, name: &str, x: &Dims, outputs: usize) -> Result<Dims> {
        let [fan_in] = x.as_slice() else {
            return Err(shape_err!("dense on unpooled activation {x:?}"));
        };
        self.spec(format!("{name}/weight"), vec![*fan_in, outputs], Init::TruncNormal);
        self.spec(format!("{name}/bias"), vec![outputs], Init::Zeros);
        self.layers += 1;
        Ok(vec![outputs])
    }
}

/// Records the computation on a graph, binding parameters by name.
pub struct GraphSink<'a, T: Scalar> {
    pub graph: &'a mut Graph<T>,
    params: &'a ParamStore<T>,
    bn: &'a mut BnStore<T>,
    bound: BTreeMap<String, Var>,
    mode: Mode,
    requires_grad: bool,
    rng: &'a mut dyn RngCore,
}

impl<'a, T: Scalar> GraphSink<'a, T> {
    pub fn new(
        graph: &'a mut Graph<T>,
        params: &'a ParamStore<T>,
        bn: &'a mut BnStore<T>,
        mode: Mode,
        rng: &'a mut dyn RngCore,
    ) -> Self {
        Self {
            graph,
            params,
            bn,
            bound: BTreeMap::new(),
            mode,
            requires_grad: mode == Mode::Train,
            rng,
        }
    }

    /// Parameters looked up in `bound` first, e.g. leaves created by a
    /// gradient check.
    pub fn with_bound(mut self, bound: BTreeMap<String, Var>) -> Self {
        self.bound = bound;
        self
    }

    pub fn requires_grad(mut self, on: bool) -> Self {
        self.requires_grad = on;
        self
    }

    /// Parameter handles used so far, by name.
    pub fn into_bound(self) -> BTreeMap<String, Var> {
        self.bound
    }

    fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self
            .params
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
        let v = self.graph.leaf(t.clone(), self.requires_grad)?;
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }
}

impl<T: Scalar> LayerSink for GraphSink<'_, T> {
    type Act = Var;

    fn dims(&self, x: &Var) -> (usize, usize, usize) {
        match *self.graph.value(*x).shape() {
            [_, h, w, c] => (h, w, c),
            [_, c] => (1, 1, c),
            ref s => unreachable!("activation shape {s:?}"),
        }
    }

    fn conv(
        &mut self,
        name: &str,
        x: &Var,
        _kh: usize,
        _kw: usize,
        _filters: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let k = self.param(&format!("{name}/kernel"))?;
        let b = self.param(&format!("{name}/bias"))?;
        self.graph.conv2d(*x, k, Some(b), stride, padding)
    }

    fn batch_norm(&mut self, name: &str, x: &Var) -> Result<Var> {
        let gamma = self.param(&format!("{name}/gamma"))?;
        let beta = self.param(&format!("{name}/beta"))?;
        let state: &mut BatchNormState<T> = self
            .bn
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("missing batchnorm state {name}")))?;
        self.graph.batch_norm(*x, gamma, beta, state, self.mode)
    }

    fn relu(&mut self, x: &Var) -> Result<Var> {
        self.graph.relu(*x)
    }

    fn maxpool(&mut self, x: &Var, window: usize, stride: usize, padding: Padding) -> Result<Var> {
        self.graph.maxpool2d(*x, window, stride, padding)
    }

    fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        self.graph.concat(xs)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.graph.add(*a, *b)
    }

    fn global_avg_pool(&mut self, x: &Var) -> Result<Var> {
        self.graph.global_avg_pool(*x)
    }

    fn dropout(&mut self, x: &Var, rate: f64) -> Result<Var> {
        self.graph.dropout(*x, rate, &mut *self.rng, self.mode)
    }

    fn dense(&mut self, name: &str, x: &Var, _outputs: usize) -> Result<Var> {
        let w = self.param(&format!("{name}/weight"))?;
        let b = self.param(&format!("{name}/bias"))?;
        self.graph.dense(*x, w, b)
    }
}

/// conv -> BN -> ReLU.
pub fn conv_bn_relu<S: LayerSink>(
    s: &mut S,
    prefix: &str,
    x: &S::Act,
    (kh, kw): (usize, usize),
    filters: usize,
    stride: usize,
    padding: Padding,
) -> Result<S::Act> {
    let y = s.conv(&format!("{prefix}/conv"), x, kh, kw, filters, stride, padding)?;
    let y = s.batch_norm(&format!("{prefix}/bn"), &y)?;
    s.relu(&y)
}

/// Residual inception block:
/// `ReLU(BN(conv3x3(concat(branches(x))) + conv1x1(x)))`.
///
/// With `cfg.factorized`, every `k×k` branch convolution (`k > 1`) becomes
/// `1×k` then `k×1`, each followed by BN and ReLU, at equal filter count.
pub fn residual_inception_block<S: LayerSink>(
    s: &mut S,
    prefix: &str,
    x: &S::Act,
    cfg: &InceptionBlockConfig,
) -> Result<S::Act> {
    cfg.validate()?;
    let (_, _, c) = s.dims(x);
    if c != cfg.input_channels {
        return Err(Error::Config(format!(
            "{prefix}: block expects {} input channels, got {c}",
            cfg.input_channels
        )));
    }
    let mut outs = Vec::with_capacity(cfg.branches.len());
    for (bi, branch) in cfg.branches.iter().enumerate() {
        let mut y = x.clone();
        for (li, layer) in branch.iter().enumerate() {
            let name = format!("{prefix}/b{bi}/l{li}");
            y = match *layer {
                BranchLayer::Conv { conv: k, filters } if cfg.factorized && k > 1 => {
                    let y = conv_bn_relu(s, &format!("{name}a"), &y, (1, k), filters, 1, Padding::Same)?;
                    conv_bn_relu(s, &format!("{name}b"), &y, (k, 1), filters, 1, Padding::Same)?
                }
                BranchLayer::Conv { conv: k, filters } => {
                    conv_bn_relu(s, &name, &y, (k, k), filters, 1, Padding::Same)?
                }
                BranchLayer::Pool { pool } => s.maxpool(&y, pool, 1, Padding::Same)?,
            };
        }
        outs.push(y);
    }
    let cat = s.concat(&outs)?;
    let merged = s.conv(
        &format!("{prefix}/merge/conv"),
        &cat,
        3,
        3,
        cfg.merge_filters,
        1,
        Padding::Same,
    )?;
    let projected = s.conv(
        &format!("{prefix}/proj/conv"),
        x,
        1,
        1,
        cfg.merge_filters,
        1,
        Padding::Same,
    )?;
    if s.dims(&merged) != s.dims(&projected) {
        return Err(Error::Config(format!(
            "{prefix}: merge {:?} and projection {:?} disagree",
            s.dims(&merged),
            s.dims(&projected)
        )));
    }
    let sum = s.add(&merged, &projected)?;
    let y = s.batch_norm(&format!("{prefix}/out/bn"), &sum)?;
    s.relu(&y)
}

/// `min(h_E, w_E) / min(h_U, w_U)` as an exact rational.
pub fn attention_ratio(encoder: (usize, usize), target: (usize, usize)) -> Ratio<usize> {
    Ratio::new(
        encoder.0.min(encoder.1).max(1),
        target.0.min(target.1).max(1),
    )
}

/// Pooling factor for an encoder map: `Some(a)` iff the ratio is an
/// integer `a >= 1`.
pub fn admissible_stride(ratio: Ratio<usize>) -> Option<usize> {
    (ratio.is_integer() && ratio.to_integer() >= 1).then(|| ratio.to_integer())
}

/// Partial attention over encoder maps.
///
/// Each admissible source is max-pooled with window and stride `a_i`
/// (identity for `a_i = 1`), projected by a 1×1 convolution to the target's
/// channel count and summed; the result is `ReLU(target + Σ projections)`.
/// Sources whose ratio is not an integer `>= 1`, or whose pooled extent does
/// not match the target, are skipped. With no admissible source the target
/// is returned unchanged.
pub fn partial_attention<S: LayerSink>(
    s: &mut S,
    prefix: &str,
    sources: &[(String, S::Act)],
    target: &S::Act,
) -> Result<S::Act> {
    let (th, tw, tc) = s.dims(target);
    let mut acc = target.clone();
    let mut used = 0;
    for (id, e) in sources {
        let (eh, ew, _) = s.dims(e);
        let ratio = attention_ratio((eh, ew), (th, tw));
        let Some(a) = admissible_stride(ratio) else {
            debug!("{prefix}: skipping {id}, ratio {ratio} is not an integer >= 1");
            continue;
        };
        if eh / a != th || ew / a != tw {
            debug!("{prefix}: skipping {id}, {eh}x{ew} pooled by {a} does not give {th}x{tw}");
            continue;
        }
        let pooled = if a > 1 {
            s.maxpool(e, a, a, Padding::Valid)?
        } else {
            e.clone()
        };
        let proj = s.conv(&format!("{prefix}/{id}/proj"), &pooled, 1, 1, tc, 1, Padding::Same)?;
        acc = s.add(&acc, &proj)?;
        used += 1;
    }
    if used == 0 {
        info!("{prefix}: no admissible encoder maps, target passed through");
        return Ok(target.clone());
    }
    s.relu(&acc)
}

/// Output of [`walk_network`].
pub struct Walked<A> {
    pub logits: A,
    /// Last feature map of every stage before downsampling.
    pub taps: BTreeMap<String, A>,
}

/// Runs the full network description through a sink.
pub fn walk_network<S: LayerSink>(s: &mut S, cfg: &NetworkConfig, input: &S::Act) -> Result<Walked<S::Act>> {
    let mut x = input.clone();
    for (i, layer) in cfg.stem.iter().enumerate() {
        x = match *layer {
            StemLayer::Conv {
                conv,
                filters,
                stride,
                padding,
            } => conv_bn_relu(s, &format!("stem/{i}"), &x, (conv, conv), filters, stride, padding)?,
            StemLayer::Pool { pool, stride } => {
                s.maxpool(&x, pool, stride.unwrap_or(pool), Padding::Valid)?
            }
        };
    }
    let mut taps: BTreeMap<String, S::Act> = BTreeMap::new();
    for stage in &cfg.stages {
        let (_, _, c) = s.dims(&x);
        if let Some(expected) = stage.in_channels {
            if expected != c {
                return Err(Error::Config(format!(
                    "stage {} declares {expected} input channels but receives {c}",
                    stage.id
                )));
            }
        }
        for j in 0..stage.blocks {
            let (_, _, c) = s.dims(&x);
            let block = stage.block.resolve(c)?;
            x = residual_inception_block(s, &format!("{}/block{j}", stage.id), &x, &block)?;
        }
        taps.insert(stage.id.clone(), x.clone());
        for att in cfg.attention.iter().filter(|a| a.target == stage.id) {
            let (_, _, tc) = s.dims(&x);
            if let Some(p) = att.projection_filters {
                if p != tc {
                    return Err(Error::Config(format!(
                        "attention on {} projects to {p} filters but the target has {tc}",
                        att.target
                    )));
                }
            }
            let sources: Vec<(String, S::Act)> = att
                .sources
                .iter()
                .map(|id| (id.clone(), taps[id].clone()))
                .collect();
            x = partial_attention(s, &format!("attn/{}", stage.id), &sources, &x)?;
        }
        if let Some(ds) = stage.downsample {
            x = s.maxpool(&x, ds.window, ds.stride(), Padding::Valid)?;
        }
    }
    let pooled = s.global_avg_pool(&x)?;
    let dropped = s.dropout(&pooled, cfg.dropout)?;
    let logits = s.dense("head/dense", &dropped, cfg.num_classes)?;
    Ok(Walked { logits, taps })
}

/// Shapes, parameter specs and layer count of a configuration.
pub fn shape_walk(cfg: &NetworkConfig) -> Result<ShapeSink> {
    cfg.validate()?;
    let mut sink = ShapeSink::default();
    walk_network(&mut sink, cfg, &cfg.input.to_vec())?;
    Ok(sink)
}

/// Counted layers (convolution + dense) and trainable parameters.
pub fn count_layers_and_params(cfg: &NetworkConfig) -> Result<(usize, usize)> {
    let sink = shape_walk(cfg).map_err(|e| match e {
        Error::Shape(msg) => Error::Config(format!("inconsistent layer chain: {msg}")),
        other => other,
    })?;
    Ok((sink.layers, sink.trainable_params()))
}

/// Builds the parameter specs of a lone block on an `h×w` input.
pub fn block_specs(cfg: &InceptionBlockConfig, h: usize, w: usize) -> Result<ShapeSink> {
    let mut sink = ShapeSink::default();
    residual_inception_block(&mut sink, "block", &vec![h, w, cfg.input_channels], cfg)?;
    Ok(sink)
}

/// Builds the parameter specs of a lone attention module.
pub fn attention_specs(encoder: &[(String, Dims)], target: &Dims) -> Result<ShapeSink> {
    let mut sink = ShapeSink::default();
    partial_attention(&mut sink, "attn", encoder, target)?;
    Ok(sink)
}

pub(crate) fn tensor_dims<T: Scalar>(t: &Tensor<T>) -> Result<Dims> {
    let (_, h, w, c) = t.dims4()?;
    Ok(vec![h, w, c])
}
