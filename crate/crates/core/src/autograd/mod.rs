//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s in execution
//! order. [`Graph::backward`] walks that record in exact reverse, so a
//! replay on identical inputs produces identical values and gradients.
//!
//! ```
//! use xgrade::autograd::Graph;
//! use xgrade::tensor::Tensor;
//!
//! let mut g = Graph::<f32>::new();
//! let x = g.param(Tensor::from_f64(&[2], &[1.0, 2.0])?)?;
//! let sq = g.mul(x, x)?;
//! let loss = g.sum(sq)?;
//! g.backward(loss)?;
//! assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
//! # Ok::<(), xgrade::Error>(())
//! ```

pub mod conv;
pub mod norm;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

pub use conv::Padding;
pub use norm::{BatchNormState, Mode};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    Concat {
        inputs: Vec<Var>,
        channels: Vec<usize>,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geometry: conv::Window2d,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        saved: norm::BnSaved<T>,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Dropout {
        input: Var,
        mask: Vec<T>,
    },
    GlobalAvgPool(Var),
    SigmoidCe {
        logits: Var,
        targets: Tensor<T>,
        weights: Vec<T>,
        positive_only: bool,
    },
}

impl<T> Op<T> {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Concat { .. } => "concat",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool { .. } => "maxpool2d",
            Op::BatchNorm { .. } => "batchnorm",
            Op::Dense { .. } => "dense",
            Op::Dropout { .. } => "dropout",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::SigmoidCe { .. } => "weighted_sigmoid_ce",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::GlobalAvgPool(a) => vec![*a],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::Conv2d {
                input,
                kernel,
                bias,
                ..
            } => {
                let mut v = vec![*input, *kernel];
                v.extend(bias);
                v
            }
            Op::MaxPool { input, .. } | Op::Dropout { input, .. } => vec![*input],
            Op::BatchNorm {
                input, gamma, beta, ..
            } => vec![*input, *gamma, *beta],
            Op::Dense {
                input,
                weight,
                bias,
            } => vec![*input, *weight, *bias],
            Op::SigmoidCe { logits, .. } => vec![*logits],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// One entry of the forward record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpRecord {
    pub kind: &'static str,
    pub inputs: Vec<Var>,
    pub output: Var,
}

#[derive(Default)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn records(&self) -> Vec<OpRecord> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| OpRecord {
                kind: n.op.kind(),
                inputs: n.op.inputs(),
                output: Var(i),
            })
            .collect()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "{} produced a non-finite value",
                op.kind()
            )));
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        value.ensure_finite("leaf tensor")?;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn param(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err!("{what}: {sa:?} vs {sb:?}"));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        Tensor::new(
            ta.shape(),
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect(),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_map(a, b, |x, y| x + y)?;
        self.push(out, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_map(a, b, |x, y| x * y)?;
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(T::zero()));
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::scalar(t.sum() / T::of(t.numel() as f64));
        self.push(out, Op::Mean(a))
    }

    /// Concatenates NHWC values along the channel axis.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let parts: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
        let channels = parts.iter().map(|t| t.shape()[t.rank() - 1]).collect();
        let out = Tensor::concat_channels(&parts)?;
        self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                channels,
            },
        )
    }

    /// 2-D convolution of an NHWC input with a `[kh, kw, C, F]` kernel.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let x = self.value(input);
        let k = self.value(kernel);
        let b = bias.map(|b| self.value(b));
        let geometry = conv::conv_geometry(x, k, b, stride, padding)?;
        let out = conv::conv2d_forward(x, k, b, &geometry)?;
        self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geometry,
            },
        )
    }

    pub fn maxpool2d(
        &mut self,
        input: Var,
        window: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let (out, argmax) = conv::maxpool_forward(self.value(input), window, stride, padding)?;
        self.push(out, Op::MaxPool { input, argmax })
    }

    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState<T>,
        mode: Mode,
    ) -> Result<Var> {
        let (out, saved) = norm::batchnorm_forward(
            self.value(input),
            self.value(gamma),
            self.value(beta),
            state,
            mode,
        )?;
        self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                saved,
            },
        )
    }

    /// `x · W + b` for `x: [N, in]`, `W: [in, out]`, `b: [out]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (n, fan_in) = self.value(input).dims2()?;
        let (w_in, fan_out) = self.value(weight).dims2()?;
        if w_in != fan_in || self.value(bias).shape() != [fan_out] {
            return Err(shape_err!(
                "dense: input {:?}, weight {:?}, bias {:?}",
                self.value(input).shape(),
                self.value(weight).shape(),
                self.value(bias).shape()
            ));
        }
        let mut out = vec![T::zero(); n * fan_out];
        T::gemm(
            n,
            fan_in,
            fan_out,
            self.value(input).data(),
            false,
            self.value(weight).data(),
            false,
            &mut out,
            false,
        );
        let b = self.value(bias).data();
        for row in out.chunks_exact_mut(fan_out) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o = *o + bv;
            }
        }
        let out = Tensor::new(&[n, fan_out], out)?;
        self.push(
            out,
            Op::Dense {
                input,
                weight,
                bias,
            },
        )
    }

    /// Inverted dropout. Identity (no record) in inference or at rate 0.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        input: Var,
        rate: f64,
        rng: &mut R,
        mode: Mode,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Argument(format!("dropout rate {rate} not in [0, 1)")));
        }
        if mode == Mode::Infer || rate == 0.0 {
            return Ok(input);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(input).numel())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let x = self.value(input);
        let out = Tensor::new(
            x.shape(),
            x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect(),
        )?;
        self.push(out, Op::Dropout { input, mask })
    }

    /// Mean over the spatial axes: `[N, H, W, C] -> [N, C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (n, h, w, c) = self.value(input).dims4()?;
        let inv = T::of(1.0 / (h * w) as f64);
        let mut out = vec![T::zero(); n * c];
        for (b, img) in self.value(input).data().chunks_exact(h * w * c).enumerate() {
            let acc = &mut out[b * c..(b + 1) * c];
            for px in img.chunks_exact(c) {
                for (a, &v) in acc.iter_mut().zip(px) {
                    *a = *a + v;
                }
            }
            acc.iter_mut().for_each(|a| *a = *a * inv);
        }
        let out = Tensor::new(&[n, c], out)?;
        self.push(out, Op::GlobalAvgPool(input))
    }

    /// Class-weighted sigmoid cross-entropy averaged over the batch and
    /// summed over classes.
    ///
    /// The full form is `w_c * (softplus(z) - y z)`, i.e.
    /// `-w_c [y log σ(z) + (1-y) log(1-σ(z))]`. With `positive_only` only the
    /// positive term `-w_c y log σ(z) = w_c y softplus(-z)` is kept.
    pub fn sigmoid_ce(
        &mut self,
        logits: Var,
        targets: &Tensor<T>,
        weights: &[T],
        positive_only: bool,
    ) -> Result<Var> {
        let (n, classes) = self.value(logits).dims2()?;
        if targets.shape() != self.value(logits).shape() {
            return Err(shape_err!(
                "targets {:?} do not match logits {:?}",
                targets.shape(),
                self.value(logits).shape()
            ));
        }
        if weights.len() != classes {
            return Err(Error::Config(format!(
                "{} class weights for {classes} classes",
                weights.len()
            )));
        }
        let z = self.value(logits).data();
        let mut total = T::zero();
        for (zr, yr) in z.chunks_exact(classes).zip(targets.data().chunks_exact(classes)) {
            for ((&zi, &yi), &w) in zr.iter().zip(yr).zip(weights) {
                let term = if positive_only {
                    yi * softplus(-zi)
                } else {
                    softplus(zi) - yi * zi
                };
                total = total + w * term;
            }
        }
        let out = Tensor::scalar(total / T::of(n as f64));
        self.push(
            out,
            Op::SigmoidCe {
                logits,
                targets: targets.clone(),
                weights: weights.to_vec(),
                positive_only,
            },
        )
    }

    /// Back-propagates from a scalar `loss`, filling the gradient of every
    /// leaf that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Argument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.nodes[i].grad = Some(dy);
                continue;
            }
            for (var, g) in self.local_grads(i, &dy)? {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => {
                        for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a = *a + v;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn local_grads(&self, i: usize, dy: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[i];
        let map_with = |src: Var, f: &dyn Fn(T, T) -> T| -> Result<Tensor<T>> {
            let x = self.value(src);
            Tensor::new(
                x.shape(),
                x.data().iter().zip(dy.data()).map(|(&xv, &g)| f(xv, g)).collect(),
            )
        };
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, dy.clone()), (*b, dy.clone())],
            Op::Mul(a, b) => {
                let mut out = Vec::new();
                if self.wants(*a) {
                    let bv = self.value(*b);
                    let g = Tensor::new(
                        dy.shape(),
                        dy.data().iter().zip(bv.data()).map(|(&g, &y)| g * y).collect(),
                    )?;
                    out.push((*a, g));
                }
                if self.wants(*b) {
                    out.push((*b, map_with(*a, &|x, g| x * g)?));
                }
                out
            }
            Op::Scale(a, s) => vec![(*a, dy.map(|g| g * *s))],
            Op::Relu(a) => vec![(
                *a,
                map_with(*a, &|x, g| if x > T::zero() { g } else { T::zero() })?,
            )],
            Op::Sigmoid(a) => {
                let y = &node.value;
                let g = Tensor::new(
                    dy.shape(),
                    y.data()
                        .iter()
                        .zip(dy.data())
                        .map(|(&s, &g)| g * s * (T::one() - s))
                        .collect(),
                )?;
                vec![(*a, g)]
            }
            Op::Sum(a) => {
                let g = dy.item()?;
                vec![(*a, Tensor::full(self.value(*a).shape(), g))]
            }
            Op::Mean(a) => {
                let x = self.value(*a);
                let g = dy.item()? / T::of(x.numel() as f64);
                vec![(*a, Tensor::full(x.shape(), g))]
            }
            Op::Concat { inputs, channels } => {
                let parts = dy.split_channels(channels)?;
                inputs.iter().copied().zip(parts).collect()
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geometry,
            } => {
                let want = (
                    self.wants(*input),
                    self.wants(*kernel),
                    bias.is_some_and(|b| self.wants(b)),
                );
                let grads = conv::conv2d_backward(
                    self.value(*input),
                    self.value(*kernel),
                    dy,
                    geometry,
                    want,
                )?;
                let mut out = Vec::new();
                if let Some(g) = grads.input {
                    out.push((*input, g));
                }
                if let Some(g) = grads.kernel {
                    out.push((*kernel, g));
                }
                if let (Some(b), Some(g)) = (bias, grads.bias) {
                    out.push((*b, g));
                }
                out
            }
            Op::MaxPool { input, argmax } => vec![(
                *input,
                conv::maxpool_backward(self.value(*input).shape(), argmax, dy)?,
            )],
            Op::BatchNorm {
                input,
                gamma,
                beta,
                saved,
            } => {
                let (dx, dg, db) = norm::batchnorm_backward(dy, self.value(*gamma), saved)?;
                vec![(*input, dx), (*gamma, dg), (*beta, db)]
            }
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let (n, fan_in) = self.value(*input).dims2()?;
                let fan_out = self.value(*bias).numel();
                let mut out = Vec::new();
                if self.wants(*input) {
                    let mut dx = vec![T::zero(); n * fan_in];
                    T::gemm(
                        n,
                        fan_out,
                        fan_in,
                        dy.data(),
                        false,
                        self.value(*weight).data(),
                        true,
                        &mut dx,
                        false,
                    );
                    out.push((*input, Tensor::new(&[n, fan_in], dx)?));
                }
                if self.wants(*weight) {
                    let mut dw = vec![T::zero(); fan_in * fan_out];
                    T::gemm(
                        fan_in,
                        n,
                        fan_out,
                        self.value(*input).data(),
                        true,
                        dy.data(),
                        false,
                        &mut dw,
                        false,
                    );
                    out.push((*weight, Tensor::new(&[fan_in, fan_out], dw)?));
                }
                if self.wants(*bias) {
                    let mut db = vec![T::zero(); fan_out];
                    for row in dy.data().chunks_exact(fan_out) {
                        for (a, &v) in db.iter_mut().zip(row) {
                            *a = *a + v;
                        }
                    }
                    out.push((*bias, Tensor::new(&[fan_out], db)?));
                }
                out
            }
            Op::Dropout { input, mask } => {
                let g = Tensor::new(
                    dy.shape(),
                    dy.data().iter().zip(mask).map(|(&g, &m)| g * m).collect(),
                )?;
                vec![(*input, g)]
            }
            Op::GlobalAvgPool(input) => {
                let (n, h, w, c) = self.value(*input).dims4()?;
                let inv = T::of(1.0 / (h * w) as f64);
                let mut dx = Vec::with_capacity(n * h * w * c);
                for row in dy.data().chunks_exact(c) {
                    for _ in 0..h * w {
                        dx.extend(row.iter().map(|&g| g * inv));
                    }
                }
                vec![(*input, Tensor::new(&[n, h, w, c], dx)?)]
            }
            Op::SigmoidCe {
                logits,
                targets,
                weights,
                positive_only,
            } => {
                let (n, classes) = self.value(*logits).dims2()?;
                let scale = dy.item()? / T::of(n as f64);
                let z = self.value(*logits).data();
                let mut g = Vec::with_capacity(z.len());
                for (zr, yr) in z.chunks_exact(classes).zip(targets.data().chunks_exact(classes)) {
                    for ((&zi, &yi), &w) in zr.iter().zip(yr).zip(weights) {
                        let p = sigmoid(zi);
                        let d = if *positive_only {
                            yi * (p - T::one())
                        } else {
                            p - yi
                        };
                        g.push(scale * w * d);
                    }
                }
                vec![(*logits, Tensor::new(&[n, classes], g)?)]
            }
        })
    }
}
