use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-channel mean and standard deviation of the training pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhitenStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl WhitenStats {
    /// No-op statistics for `c` channels.
    pub fn identity(c: usize) -> Self {
        WhitenStats {
            mean: vec![0.0; c],
            std: vec![1.0; c],
        }
    }
}

pub fn compute_whiten(train: &Dataset) -> Result<WhitenStats> {
    let first = train
        .samples
        .first()
        .ok_or_else(|| Error::Data("cannot compute whitening statistics of an empty dataset".into()))?;
    let c = first.image.shape().c;
    let mut sum = vec![0.0f64; c];
    let mut count = 0usize;
    for s in &train.samples {
        for (ch, acc) in sum.iter_mut().enumerate() {
            *acc += s.image.plane(0, ch).iter().map(|&v| v as f64).sum::<f64>();
        }
        count += s.image.shape().plane();
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0f64; c];
    for s in &train.samples {
        for (ch, acc) in sq.iter_mut().enumerate() {
            let m = mean[ch];
            *acc += s.image.plane(0, ch).iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>();
        }
    }
    let mut std = Vec::with_capacity(c);
    for (ch, s) in sq.iter().enumerate() {
        let sd = (s / count as f64).sqrt();
        if !(sd > 0.0) {
            return Err(Error::ZeroVariance(ch));
        }
        std.push(sd);
    }
    Ok(WhitenStats { mean, std })
}

/// `(x[c] − mean[c]) / std[c]` for every channel.
pub fn apply_whiten<T: Scalar>(x: &Tensor<T>, stats: &WhitenStats) -> Result<Tensor<T>> {
    affine(x, stats, false)
}

/// `x[c] · std[c] + mean[c]`.
pub fn invert_whiten<T: Scalar>(x: &Tensor<T>, stats: &WhitenStats) -> Result<Tensor<T>> {
    affine(x, stats, true)
}

fn affine<T: Scalar>(x: &Tensor<T>, stats: &WhitenStats, inverse: bool) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.c != stats.mean.len() {
        return Err(Error::shape("whiten", s, format!("{} channels", stats.mean.len())));
    }
    let mut out = x.clone();
    for n in 0..s.n {
        for c in 0..s.c {
            let m = T::from_f64_lossy(stats.mean[c]);
            let sd = T::from_f64_lossy(stats.std[c]);
            for v in out.plane_mut(n, c) {
                *v = if inverse { *v * sd + m } else { (*v - m) / sd };
            }
        }
    }
    Ok(out)
}
