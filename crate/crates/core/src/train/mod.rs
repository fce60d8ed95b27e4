//! Loss, optimizer, learning-rate schedule, gradient clipping, checkpoints
//! and the training loop.
//!
//! The optimizer is SGD with Nesterov momentum in the form
//!
//! ```text
//! v ← µ·v − lr·g
//! p ← p + µ·v − lr·g
//! ```
//!
//! where `v` on the second line is the freshly updated velocity.

pub mod checkpoint;
mod trainer;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, LoadReport};
pub use trainer::{train_loop, LoopOptions, StepRecord};

use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// One positive weight per class.
    pub class_weights: Vec<f32>,
    /// `ε` in `[0, 0.5)`: positives become `1 − ε`, negatives `ε`.
    pub label_smoothing: f32,
    /// Keep only the positive-label term of the cross-entropy.
    pub positive_only: bool,
}

impl LossConfig {
    pub fn uniform(classes: usize) -> Self {
        Self {
            class_weights: vec![1.0; classes],
            label_smoothing: 0.1,
            positive_only: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_weights.is_empty() {
            return Err(Error::Config("no class weights".into()));
        }
        if let Some(w) = self.class_weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::Config(format!("class weight {w} must be positive")));
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "label smoothing {} not in [0, 0.5)",
                self.label_smoothing
            )));
        }
        Ok(())
    }
}

/// Inverse-frequency weights `N / (n · N_c)`.
pub fn class_weights(positives: &[usize], total: usize, classes: &[String]) -> Result<Vec<f32>> {
    let n = positives.len();
    positives
        .iter()
        .zip(classes)
        .map(|(&p, name)| {
            if p == 0 {
                Err(Error::Data(format!("class {name} has no positive samples")))
            } else {
                Ok((total as f64 / (n * p) as f64) as f32)
            }
        })
        .collect()
}

/// Maps hard 0/1 targets to `ε` / `1 − ε`.
pub fn label_smooth<T: Scalar>(targets: &Tensor<T>, epsilon: f64) -> Result<Tensor<T>> {
    if !(0.0..0.5).contains(&epsilon) {
        return Err(Error::Argument(format!("label smoothing {epsilon} not in [0, 0.5)")));
    }
    let (lo, hi) = (T::of(epsilon), T::of(1.0 - epsilon));
    let data = targets
        .data()
        .iter()
        .map(|&y| {
            if y == T::one() {
                Ok(hi)
            } else if y == T::zero() {
                Ok(lo)
            } else {
                Err(Error::Argument(format!("target {y} is not 0 or 1")))
            }
        })
        .collect::<Result<Vec<T>>>()?;
    Tensor::new(targets.shape(), data)
}

/// Smooths the hard `targets` and records the weighted sigmoid
/// cross-entropy of `logits` on the graph.
pub fn weighted_sigmoid_ce<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    targets: &Tensor<T>,
    cfg: &LossConfig,
) -> Result<Var> {
    let classes = g.value(logits).dims2()?.1;
    if cfg.class_weights.len() != classes {
        return Err(Error::Config(format!(
            "{} class weights for {classes} classes",
            cfg.class_weights.len()
        )));
    }
    let soft = label_smooth(targets, cfg.label_smoothing as f64)?;
    let weights: Vec<T> = cfg.class_weights.iter().map(|&w| T::of(w as f64)).collect();
    g.sigmoid_ce(logits, &soft, &weights, cfg.positive_only)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub end_lr: f64,
    pub power: f64,
    pub total_steps: u64,
    pub momentum: f64,
    pub max_global_norm: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.01,
            end_lr: 1e-4,
            power: 1.0,
            total_steps: 1000,
            momentum: 0.9,
            max_global_norm: 10.0,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // A zero end rate is allowed so that frozen (lr = 0) runs are expressible.
        if !(0.0 <= self.end_lr && self.end_lr <= self.base_lr && self.base_lr.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 <= end_lr ({}) <= base_lr ({})",
                self.end_lr, self.base_lr
            )));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} not in [0, 1)", self.momentum)));
        }
        if !(self.max_global_norm > 0.0) {
            return Err(Error::Config("max_global_norm must be positive".into()));
        }
        if !(self.power >= 0.0) {
            return Err(Error::Config("power must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// `(base − end)·(1 − min(step, total)/total)^power + end`.
pub fn poly_lr(step: u64, cfg: &TrainConfig) -> f64 {
    if step == 0 {
        return cfg.base_lr;
    }
    let frac = 1.0 - step.min(cfg.total_steps) as f64 / cfg.total_steps as f64;
    (cfg.base_lr - cfg.end_lr) * frac.powf(cfg.power) + cfg.end_lr
}

fn global_norm<'a>(grads: impl Iterator<Item = &'a Tensor>) -> f64 {
    grads.map(Tensor::sq_norm).sum::<f64>().sqrt()
}

/// Rescales all gradients together so their joint L2 norm is at most
/// `max_norm`; returns the norm before clipping. Gradients already within
/// the bound are left untouched, which makes the operation idempotent.
pub fn clip_global_norm(grads: &mut [&mut Tensor], max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::Argument(format!("max_norm {max_norm} must be positive")));
    }
    let norm = global_norm(grads.iter().map(|g| &**g));
    if !norm.is_finite() {
        return Err(Error::Numeric(format!("gradient norm is {norm}")));
    }
    if norm <= max_norm {
        return Ok(norm);
    }
    let mut scale = max_norm / norm;
    loop {
        let scaled: Vec<Tensor> = grads.iter().map(|g| g.map(|v| (v as f64 * scale) as f32)).collect();
        if global_norm(scaled.iter()) <= max_norm {
            for (g, s) in grads.iter_mut().zip(scaled) {
                **g = s;
            }
            return Ok(norm);
        }
        // f32 rounding pushed the norm just over the bound.
        scale *= 1.0 - 1e-7;
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimState {
    pub velocity: BTreeMap<String, Tensor>,
    pub step: u64,
}

/// One Nesterov update of every parameter that has a gradient.
pub fn nesterov_step(
    params: &mut BTreeMap<String, Tensor>,
    grads: &BTreeMap<String, Tensor>,
    state: &mut OptimState,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    let (lr, mu) = (lr as f32, momentum as f32);
    for (name, g) in grads {
        let p = params
            .get_mut(name)
            .ok_or_else(|| Error::Argument(format!("gradient for unknown parameter {name}")))?;
        if p.shape() != g.shape() {
            return Err(shape_err!("{name}: parameter {:?}, gradient {:?}", p.shape(), g.shape()));
        }
        let v = state
            .velocity
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        if v.shape() != g.shape() {
            return Err(shape_err!("{name}: velocity {:?}, gradient {:?}", v.shape(), g.shape()));
        }
        for ((pi, vi), &gi) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vi = mu * *vi - lr * gi;
            *pi += mu * *vi - lr * gi;
        }
    }
    state.step += 1;
    Ok(())
}
