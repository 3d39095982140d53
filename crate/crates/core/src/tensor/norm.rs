use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Whether batch norm uses batch statistics (train) or running ones (eval).
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel affine parameters and running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub epsilon: T,
    pub momentum: T,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            epsilon: T::from_f64_lossy(BN_EPSILON),
            momentum: T::from_f64_lossy(BN_MOMENTUM),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Exponential moving average update from a train-mode forward.
    pub fn update_running(&mut self, cache: &BnCache<T>) {
        let m = self.momentum;
        let keep = T::one() - m;
        for c in 0..self.channels() {
            self.running_mean[c] = keep * self.running_mean[c] + m * cache.batch_mean[c];
            self.running_var[c] = keep * self.running_var[c] + m * cache.batch_var_unbiased[c];
        }
    }

    pub fn cast<U: Scalar>(&self) -> BatchNormState<U> {
        let c = |v: &Vec<T>| v.iter().map(|&x| U::from_f64_lossy(x.to_f64_lossy())).collect();
        BatchNormState {
            gamma: c(&self.gamma),
            beta: c(&self.beta),
            running_mean: c(&self.running_mean),
            running_var: c(&self.running_var),
            epsilon: U::from_f64_lossy(self.epsilon.to_f64_lossy()),
            momentum: U::from_f64_lossy(self.momentum.to_f64_lossy()),
        }
    }
}

/// Values saved by the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    pub mode: Mode,
    pub x_hat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    pub batch_var_unbiased: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct BnGrads<T> {
    pub x: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Normalises each channel and applies `gamma · x̂ + beta`.
///
/// Pure: running statistics are not touched here; call
/// [`BatchNormState::update_running`] with the returned cache after a
/// train-mode step.
pub fn batchnorm_forward<T: Scalar>(
    x: &Tensor<T>,
    state: &BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let xs = x.shape();
    if xs.c != state.channels() {
        return Err(Error::shape(
            "batchnorm",
            xs,
            format!("{} channels", state.channels()),
        ));
    }
    let count = xs.n * xs.plane();
    let mut mean = state.running_mean.clone();
    let mut var = state.running_var.clone();
    let mut var_unbiased = state.running_var.clone();
    if mode == Mode::Train {
        if xs.n < 2 {
            return Err(Error::BatchTooSmall(xs.n));
        }
        let cnt = T::from_usize(count).unwrap();
        for c in 0..xs.c {
            let mut s = T::zero();
            for n in 0..xs.n {
                s += x.plane(n, c).iter().copied().sum::<T>();
            }
            let mu = s / cnt;
            let mut sq = T::zero();
            for n in 0..xs.n {
                sq += x.plane(n, c).iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
            }
            mean[c] = mu;
            var[c] = sq / cnt;
            var_unbiased[c] = sq / T::from_usize(count.saturating_sub(1).max(1)).unwrap();
        }
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + state.epsilon).sqrt()).collect();
    let mut x_hat = Tensor::zeros(xs);
    let mut out = Tensor::zeros(xs);
    for n in 0..xs.n {
        for c in 0..xs.c {
            let (mu, is, g, b) = (mean[c], inv_std[c], state.gamma[c], state.beta[c]);
            let src = x.plane(n, c);
            let xh = x_hat.plane_mut(n, c);
            for (d, &v) in xh.iter_mut().zip(src) {
                *d = (v - mu) * is;
            }
            let xh = x_hat.plane(n, c).to_vec();
            for (d, v) in out.plane_mut(n, c).iter_mut().zip(xh) {
                *d = g * v + b;
            }
        }
    }
    Ok((
        out,
        BnCache {
            mode,
            x_hat,
            inv_std,
            batch_mean: mean,
            batch_var_unbiased: var_unbiased,
        },
    ))
}

pub fn batchnorm_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    cache: &BnCache<T>,
    state: &BatchNormState<T>,
) -> Result<BnGrads<T>> {
    let xs = cache.x_hat.shape();
    if grad_out.shape() != xs {
        return Err(Error::shape("batchnorm_backward", grad_out.shape(), xs));
    }
    let mut dgamma = vec![T::zero(); xs.c];
    let mut dbeta = vec![T::zero(); xs.c];
    for c in 0..xs.c {
        for n in 0..xs.n {
            for (&g, &h) in grad_out.plane(n, c).iter().zip(cache.x_hat.plane(n, c)) {
                dgamma[c] += g * h;
                dbeta[c] += g;
            }
        }
    }
    let mut dx = Tensor::zeros(xs);
    match cache.mode {
        Mode::Eval => {
            for n in 0..xs.n {
                for c in 0..xs.c {
                    let k = state.gamma[c] * cache.inv_std[c];
                    for (d, &g) in dx.plane_mut(n, c).iter_mut().zip(grad_out.plane(n, c)) {
                        *d = g * k;
                    }
                }
            }
        }
        Mode::Train => {
            let m = T::from_usize(xs.n * xs.plane()).unwrap();
            for c in 0..xs.c {
                // dx = γ·σ⁻¹/m · (m·dy − Σdy − x̂·Σ(dy·x̂))
                let k = state.gamma[c] * cache.inv_std[c] / m;
                let (sum_dy, sum_dy_xh) = (dbeta[c], dgamma[c]);
                for n in 0..xs.n {
                    let xh = cache.x_hat.plane(n, c).to_vec();
                    let g = grad_out.plane(n, c);
                    for ((d, &gv), &h) in dx.plane_mut(n, c).iter_mut().zip(g).zip(&xh) {
                        *d = k * (m * gv - sum_dy - h * sum_dy_xh);
                    }
                }
            }
        }
    }
    Ok(BnGrads {
        x: dx,
        gamma: dgamma,
        beta: dbeta,
    })
}
