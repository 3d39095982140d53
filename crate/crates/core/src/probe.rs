//! Inactive channels and noise injection.
//!
//! A channel is inactive on a dataset when its post-ReLU output is exactly
//! zero at every image and position. Injecting `max(g, 0)`, `g ~ N(0, 1)`,
//! into such channels and measuring the change in validation loss shows
//! whether the rest of the network still listens to them.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{rng, Dataset, WhitenStats};
use crate::error::{Error, Result};
use crate::graph::{ModelGraph, Mode};
use crate::tensor::{Scalar, Tensor};
use crate::train::{eval_batch, evaluate, evaluate_hooked};
use crate::tsv;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InactiveReport {
    pub layer: String,
    /// Channels whose maximum activation is exactly zero, ascending.
    pub inactive: Vec<usize>,
    pub max_activation: Vec<f32>,
    pub dataset: String,
    pub images: usize,
}

pub fn find_inactive(
    model: &ModelGraph<f32>,
    ds: &Dataset,
    layer: &str,
    whiten: Option<&WhitenStats>,
    batch: usize,
) -> Result<InactiveReport> {
    if ds.is_empty() {
        return Err(Error::Data("inactive-channel search needs a non-empty dataset".into()));
    }
    let idx = model.resolve(layer)?;
    let (_, h, w) = model.arch().input;
    let mut max: Vec<f32> = Vec::new();
    let indices: Vec<usize> = (0..ds.len()).collect();
    for chunk in indices.chunks(batch.max(1)) {
        let (x, _) = eval_batch(ds, chunk, (h, w), whiten)?;
        let trace = model.run_until(&x, Mode::Eval, idx, None)?;
        let act = trace.output(idx).expect("traced");
        let s = act.shape();
        if max.is_empty() {
            max = vec![f32::NEG_INFINITY; s.c];
        }
        for n in 0..s.n {
            for (c, m) in max.iter_mut().enumerate() {
                *m = act.plane(n, c).iter().copied().fold(*m, f32::max);
            }
        }
    }
    Ok(InactiveReport {
        layer: layer.to_string(),
        inactive: (0..max.len()).filter(|&c| max[c] == 0.0).collect(),
        max_activation: max,
        dataset: ds.fingerprint(),
        images: ds.len(),
    })
}

pub const INACTIVE_HEADER: [&str; 3] = ["channel", "max_activation", "inactive"];

pub fn write_inactive(path: impl AsRef<Path>, report: &InactiveReport) -> Result<()> {
    tsv::write(
        path,
        &INACTIVE_HEADER,
        report.max_activation.iter().enumerate().map(|(c, m)| {
            vec![c.to_string(), m.to_string(), (report.inactive.binary_search(&c).is_ok() as u8).to_string()]
        }),
    )
}

/// Adds `max(g, 0)` with fresh standard-normal `g` to every element of the
/// listed channels, drawing in `(n, channel, row, col)` order.
pub fn inject_noise_in_place<T: Scalar>(x: &mut Tensor<T>, channels: &[usize], rng: &mut impl Rng) {
    let n = x.shape().n;
    for item in 0..n {
        for &c in channels {
            for v in x.plane_mut(item, c) {
                let g: f64 = rng.sample(StandardNormal);
                *v += T::from_f64_lossy(g.max(0.0));
            }
        }
    }
}

pub fn inject_noise<T: Scalar>(x: &Tensor<T>, channels: &[usize], rng: &mut impl Rng) -> Tensor<T> {
    let mut out = x.clone();
    inject_noise_in_place(&mut out, channels, rng);
    out
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Every inactive channel in every batch.
    All,
    /// One inactive channel per batch, drawn uniformly.
    RandomOne,
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(NoiseMode::All),
            "random_one" | "random" => Ok(NoiseMode::RandomOne),
            other => Err(Error::InvalidArgument(format!("unknown noise mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseEvalResult {
    pub clean_loss: f64,
    pub noised_loss: f64,
    pub delta: f64,
    pub mode: NoiseMode,
    pub seed: u64,
    /// Channel drawn for each batch in random-one mode.
    pub batch_channels: Vec<usize>,
}

/// Clean and noised validation loss. Batch `b` draws from stream `b` of
/// `seed`: first the channel (random-one mode), then the noise.
pub fn eval_noised(
    model: &ModelGraph<f32>,
    ds: &Dataset,
    report: &InactiveReport,
    mode: NoiseMode,
    seed: u64,
    whiten: Option<&WhitenStats>,
    batch: usize,
) -> Result<NoiseEvalResult> {
    if mode == NoiseMode::RandomOne && report.inactive.is_empty() {
        return Err(Error::InvalidArgument("random-one noise needs at least one inactive channel".into()));
    }
    let target = model.resolve(&report.layer)?;
    let clean = evaluate(model, ds, whiten, batch)?;
    let mut batch_channels = Vec::new();
    let noised = evaluate_hooked(model, ds, whiten, batch, |b, layer, t| {
        if layer != target {
            return;
        }
        let mut r = rng::stream(seed, b as u64);
        match mode {
            NoiseMode::All => inject_noise_in_place(t, &report.inactive, &mut r),
            NoiseMode::RandomOne => {
                let c = report.inactive[r.random_range(0..report.inactive.len())];
                batch_channels.push(c);
                inject_noise_in_place(t, &[c], &mut r);
            }
        }
    })?;
    Ok(NoiseEvalResult {
        clean_loss: clean.loss,
        noised_loss: noised.loss,
        delta: noised.loss - clean.loss,
        mode,
        seed,
        batch_channels,
    })
}
