use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::{clip_global_norm, nesterov_step, poly_lr, weighted_sigmoid_ce, LossConfig, OptimState, TrainConfig};
use crate::autograd::{Graph, Mode};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// 1-based index of the completed step.
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LoopOptions {
    /// Where to write checkpoints; `None` disables checkpointing.
    pub checkpoint: Option<PathBuf>,
    /// Checkpoint every this many steps (and after the last step).
    pub checkpoint_every: u64,
}

/// Trains until `optim.step` reaches `cfg.total_steps`, or until `on_step`
/// returns `false`.
///
/// A non-finite loss or gradient aborts with
/// [`Error::TrainingDiverged`]; the checkpoint on disk is then the last one
/// written from finite state.
pub fn train_loop<I, F>(
    net: &mut Network,
    optim: &mut OptimState,
    batches: I,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    opts: &LoopOptions,
    mut on_step: F,
) -> Result<Vec<StepRecord>>
where
    I: IntoIterator<Item = Result<Batch>>,
    F: FnMut(&Network, &StepRecord) -> Result<bool>,
{
    cfg.validate()?;
    loss_cfg.validate()?;
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed::mix64(
        seed::substream(cfg.seed, "dropout") ^ optim.step,
    ));
    let mut batches = batches.into_iter();
    let mut records = Vec::new();
    let diverged = |step: u64, what: String| {
        let kept = match &opts.checkpoint {
            Some(p) if p.exists() => format!("; last good checkpoint kept at {}", p.display()),
            _ => String::new(),
        };
        Error::TrainingDiverged {
            step,
            reason: format!("{what}{kept}"),
        }
    };

    while optim.step < cfg.total_steps {
        let step = optim.step + 1;
        let batch = batches
            .next()
            .ok_or_else(|| Error::Data("batch stream ended early".into()))??;
        let lr = poly_lr(optim.step, cfg);

        let mut g = Graph::new();
        let x = g.constant(batch.images)?;
        let fwd = match net.forward(&mut g, x, Mode::Train, &mut dropout_rng) {
            Err(Error::Numeric(m)) => return Err(diverged(step, m)),
            other => other?,
        };
        let loss = match weighted_sigmoid_ce(&mut g, fwd.logits, &batch.targets, loss_cfg) {
            Err(Error::Numeric(m)) => return Err(diverged(step, format!("loss: {m}"))),
            other => other?,
        };
        let loss_value = g.value(loss).item()? as f64;
        g.backward(loss)?;

        let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
        for (name, v) in &fwd.params {
            let grad = g
                .take_grad(*v)
                .unwrap_or_else(|| Tensor::zeros(g.value(*v).shape()));
            grads.insert(name.clone(), grad);
        }
        let mut refs: Vec<&mut Tensor> = grads.values_mut().collect();
        let grad_norm = match clip_global_norm(&mut refs, cfg.max_global_norm) {
            Err(Error::Numeric(m)) => return Err(diverged(step, m)),
            other => other?,
        };
        nesterov_step(net.params_mut(), &grads, optim, lr, cfg.momentum)?;
        if let Some((name, _)) = net.params().iter().find(|(_, p)| !p.is_finite()) {
            return Err(diverged(step, format!("parameter {name} became non-finite")));
        }

        let record = StepRecord {
            step,
            lr,
            loss: loss_value,
            grad_norm,
        };
        log::debug!("step {step} lr {lr:.3e} loss {loss_value:.6} |g| {grad_norm:.4}");
        records.push(record);

        let last = optim.step >= cfg.total_steps;
        if let Some(path) = &opts.checkpoint {
            if last || (opts.checkpoint_every > 0 && step.is_multiple_of(opts.checkpoint_every)) {
                Checkpoint::from_network(net, Some(optim)).write(path)?;
            }
        }
        if !on_step(net, &record)? {
            if let Some(path) = &opts.checkpoint {
                Checkpoint::from_network(net, Some(optim)).write(path)?;
            }
            break;
        }
    }
    Ok(records)
}
