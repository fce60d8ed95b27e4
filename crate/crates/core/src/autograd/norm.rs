use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Running per-channel moments used by batch normalization in inference.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T = f32> {
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    /// Fraction of the previous running value kept at each update.
    pub momentum: T,
    pub epsilon: T,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            momentum: T::of(0.9),
            epsilon: T::of(1e-5),
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.numel()
    }
}

pub(crate) struct BnSaved<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mode: Mode,
}

/// Normalizes the last axis of `x`. In train mode the running moments of
/// `state` are updated with the (unbiased) batch moments.
pub(crate) fn batchnorm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BnSaved<T>)> {
    let c = *x
        .shape()
        .last()
        .ok_or_else(|| shape_err!("batchnorm on rank-0 tensor"))?;
    if x.shape()[0] == 0 {
        return Err(Error::Argument("batchnorm on empty batch".into()));
    }
    if gamma.shape() != [c] || beta.shape() != [c] || state.channels() != c {
        return Err(shape_err!(
            "batchnorm parameters {:?}/{:?} do not match {c} channels",
            gamma.shape(),
            beta.shape()
        ));
    }
    let m = x.numel() / c;
    let (mean, var) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0f64; c];
            for row in x.data().chunks_exact(c) {
                for (acc, v) in mean.iter_mut().zip(row) {
                    *acc += v.as_f64();
                }
            }
            mean.iter_mut().for_each(|v| *v /= m as f64);
            let mut var = vec![0.0f64; c];
            for row in x.data().chunks_exact(c) {
                for ((acc, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                    let d = v.as_f64() - mu;
                    *acc += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= m as f64);

            let keep = state.momentum;
            let unbias = if m > 1 { m as f64 / (m - 1) as f64 } else { 1.0 };
            for ch in 0..c {
                let rm = &mut state.running_mean.data_mut()[ch];
                *rm = keep * *rm + (T::one() - keep) * T::of(mean[ch]);
                let rv = &mut state.running_var.data_mut()[ch];
                *rv = keep * *rv + (T::one() - keep) * T::of(var[ch] * unbias);
            }
            (
                mean.into_iter().map(T::of).collect::<Vec<_>>(),
                var.into_iter().map(T::of).collect::<Vec<_>>(),
            )
        }
        Mode::Infer => (
            state.running_mean.data().to_vec(),
            state.running_var.data().to_vec(),
        ),
    };
    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::one() / (v + state.epsilon).sqrt())
        .collect();
    let mut xhat = Vec::with_capacity(x.numel());
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks_exact(c) {
        for ch in 0..c {
            let h = (row[ch] - mean[ch]) * inv_std[ch];
            xhat.push(h);
            out.push(gamma.data()[ch] * h + beta.data()[ch]);
        }
    }
    Ok((
        Tensor::new(x.shape(), out)?,
        BnSaved {
            xhat,
            inv_std,
            mode,
        },
    ))
}

pub(crate) fn batchnorm_backward<T: Scalar>(
    dy: &Tensor<T>,
    gamma: &Tensor<T>,
    saved: &BnSaved<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let c = gamma.numel();
    let m = dy.numel() / c;
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (g_row, h_row) in dy.data().chunks_exact(c).zip(saved.xhat.chunks_exact(c)) {
        for ch in 0..c {
            dbeta[ch] = dbeta[ch] + g_row[ch];
            dgamma[ch] = dgamma[ch] + g_row[ch] * h_row[ch];
        }
    }
    let mut dx = Vec::with_capacity(dy.numel());
    match saved.mode {
        Mode::Train => {
            let mf = T::of(m as f64);
            for (g_row, h_row) in dy.data().chunks_exact(c).zip(saved.xhat.chunks_exact(c)) {
                for ch in 0..c {
                    let scale = gamma.data()[ch] * saved.inv_std[ch] / mf;
                    dx.push(scale * (mf * g_row[ch] - dbeta[ch] - h_row[ch] * dgamma[ch]));
                }
            }
        }
        Mode::Infer => {
            for g_row in dy.data().chunks_exact(c) {
                for ch in 0..c {
                    dx.push(g_row[ch] * gamma.data()[ch] * saved.inv_std[ch]);
                }
            }
        }
    }
    Ok((
        Tensor::new(dy.shape(), dx)?,
        Tensor::new(&[c], dgamma)?,
        Tensor::new(&[c], dbeta)?,
    ))
}
