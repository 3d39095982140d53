//! Mini-batch SGD with momentum, step-decayed learning rate, per-epoch
//! checkpoints and a metrics log.

use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    apply_whiten, compute_whiten, eval_transform, horizontal_flip, random_resized_crop, rng, Dataset, WhitenStats,
};
use crate::error::{Error, Result};
use crate::graph::{Checkpoint, CheckpointMeta, Hook, ModelGraph, Mode, ParamRole, ParamSet};
use crate::tensor::{Scalar, Tensor};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augment {
    /// Random resized crop followed by a horizontal flip.
    CropFlip,
    CropOnly,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_drop_factor: f64,
    pub lr_drop_every: usize,
    pub epochs: usize,
    pub batch: usize,
    pub eval_batch: usize,
    pub seed: u64,
    /// Apply weight decay to every trainable tensor instead of only
    /// convolution and linear weights.
    pub decay_all: bool,
    pub augment: Augment,
    pub flip_prob: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_drop_factor: 10.0,
            lr_drop_every: 30,
            epochs: 90,
            batch: 256,
            eval_batch: 256,
            seed: 0,
            decay_all: false,
            augment: Augment::CropFlip,
            flip_prob: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.lr0 > 0.0) || !(self.lr_drop_factor > 0.0) {
            return bad("learning rate and drop factor must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad(format!(
                "momentum must lie in [0, 1) and weight decay be non-negative (got {}, {})",
                self.momentum, self.weight_decay
            ));
        }
        if self.batch < 2 {
            return bad(format!("batch must be at least 2 for batch norm, got {}", self.batch));
        }
        if self.eval_batch == 0 || self.lr_drop_every == 0 {
            return bad("eval_batch and lr_drop_every must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad(format!("flip_prob must lie in [0, 1], got {}", self.flip_prob));
        }
        Ok(())
    }

    /// `lr0 / factor^⌊epoch / every⌋`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 / self.lr_drop_factor.powi((epoch / self.lr_drop_every) as i32)
    }

    fn decays(&self, role: ParamRole) -> bool {
        role == ParamRole::Weight || (self.decay_all && role.trainable())
    }
}

/// Mean softmax cross-entropy over the batch, its gradient with respect to
/// the logits, and the number of top-1 hits.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>, usize)> {
    let s = logits.shape();
    if labels.len() != s.n {
        return Err(Error::shape("cross entropy labels", labels.len(), s.n));
    }
    let k = s.item_len();
    let inv_n = 1.0 / s.n as f64;
    let mut grad = Tensor::zeros(s);
    let mut total = 0.0f64;
    let mut hits = 0;
    for (n, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::InvalidArgument(format!("label {label} with {k} logits")));
        }
        let z: Vec<f64> = logits.item(n).iter().map(|v| v.to_f64_lossy()).collect();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - z[label];
        // first maximum wins ties
        let pred = z.iter().enumerate().fold(0, |best, (i, &v)| if v > z[best] { i } else { best });
        hits += (pred == label) as usize;
        for (i, g) in grad.item_mut(n).iter_mut().enumerate() {
            let p = (z[i] - lse).exp();
            *g = T::from_f64_lossy((p - (i == label) as u8 as f64) * inv_n);
        }
    }
    if !total.is_finite() {
        return Err(Error::Numeric("cross-entropy loss is not finite".into()));
    }
    Ok((total * inv_n, grad, hits))
}

/// One SGD step over the trainable parameters:
/// `v ← m·v + g + wd·θ`, `θ ← θ − lr·v`.
pub fn sgd_step<T: Scalar>(
    model: &mut ModelGraph<T>,
    grads: &ParamSet<T>,
    velocity: &mut ParamSet<T>,
    config: &TrainConfig,
    epoch: usize,
) -> Result<()> {
    for g in grads.iter() {
        if g.values.iter().any(|v| !v.is_finite()) {
            let layer = g.name.rsplit_once('.').map_or(g.name.as_str(), |(l, _)| l);
            return Err(Error::Numeric(format!("non-finite gradient for `{}` in layer `{layer}`", g.name)));
        }
    }
    let lr = T::from_f64_lossy(config.lr_at(epoch));
    let m = T::from_f64_lossy(config.momentum);
    let wd = T::from_f64_lossy(config.weight_decay);
    let mut slot = 0;
    let mut mismatch = None;
    model.visit_params_mut(|name, role, theta| {
        if !role.trainable() || mismatch.is_some() {
            return;
        }
        let (Some(g), Some(v)) = (grads.0.get(slot), velocity.0.get_mut(slot)) else {
            mismatch = Some(name.to_string());
            return;
        };
        slot += 1;
        if g.name != name || v.name != name || g.values.len() != theta.len() || v.values.len() != theta.len() {
            mismatch = Some(name.to_string());
            return;
        }
        let decay = config.decays(role);
        for ((t, &gi), vi) in theta.iter_mut().zip(&g.values).zip(v.values.iter_mut()) {
            let mut step = m * *vi + gi;
            if decay {
                step += wd * *t;
            }
            *vi = step;
            *t = *t - lr * step;
        }
    });
    match mismatch {
        Some(name) => Err(Error::InvalidArgument(format!("gradients are not aligned with parameter `{name}`"))),
        None if slot != grads.len() => Err(Error::InvalidArgument("gradient set has extra tensors".into())),
        None => Ok(()),
    }
}

/// Evaluation-mode input for sample `idx`: resize/centre-crop to the
/// model's input size, then whiten.
pub fn eval_input(ds: &Dataset, idx: usize, out_hw: (usize, usize), whiten: Option<&WhitenStats>) -> Result<Tensor<f32>> {
    let x = eval_transform(&ds.samples[idx].image, out_hw)?;
    match whiten {
        Some(w) => apply_whiten(&x, w),
        None => Ok(x),
    }
}

/// Stacks evaluation inputs for `indices`.
pub fn eval_batch(
    ds: &Dataset,
    indices: &[usize],
    out_hw: (usize, usize),
    whiten: Option<&WhitenStats>,
) -> Result<(Tensor<f32>, Vec<usize>)> {
    let imgs: Vec<Tensor<f32>> = indices
        .par_iter()
        .map(|&i| eval_input(ds, i, out_hw, whiten))
        .collect::<Result<_>>()?;
    let refs: Vec<&Tensor<f32>> = imgs.iter().collect();
    Ok((Tensor::stack(&refs)?, indices.iter().map(|&i| ds.samples[i].label).collect()))
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub loss: f64,
    pub top1: f64,
}

/// Mean cross-entropy and top-1 accuracy in eval mode.
pub fn evaluate(model: &ModelGraph<f32>, ds: &Dataset, whiten: Option<&WhitenStats>, batch: usize) -> Result<EvalResult> {
    evaluate_hooked(model, ds, whiten, batch, |_, _, _| {})
}

/// [`evaluate`] with `hook(batch_index, layer_index, output)` applied to
/// every layer output. Batches are consecutive runs of `batch` samples.
pub fn evaluate_hooked(
    model: &ModelGraph<f32>,
    ds: &Dataset,
    whiten: Option<&WhitenStats>,
    batch: usize,
    mut hook: impl FnMut(usize, usize, &mut Tensor<f32>),
) -> Result<EvalResult> {
    if ds.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    if batch == 0 {
        return Err(Error::InvalidArgument("evaluation batch must be positive".into()));
    }
    let (_, h, w) = model.arch().input;
    let mut loss_sum = 0.0f64;
    let mut hits = 0usize;
    let indices: Vec<usize> = (0..ds.len()).collect();
    for (b, chunk) in indices.chunks(batch).enumerate() {
        let (x, labels) = eval_batch(ds, chunk, (h, w), whiten)?;
        let mut per_layer = |layer: usize, t: &mut Tensor<f32>| hook(b, layer, t);
        let hook_ref: Hook<'_, f32> = &mut per_layer;
        let trace = model.run(&x, Mode::Eval, Some(hook_ref))?;
        let (loss, _, h) = softmax_cross_entropy(trace.final_output(), &labels)?;
        loss_sum += loss * chunk.len() as f64;
        hits += h;
    }
    Ok(EvalResult {
        loss: loss_sum / ds.len() as f64,
        top1: hits as f64 / ds.len() as f64,
    })
}

/// Loss and accuracy of one epoch.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based count of completed epochs.
    pub epoch: usize,
    pub train: EvalResult,
    pub val: Option<EvalResult>,
}

/// Mutable training state; everything needed to resume bit-exactly.
pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub model: ModelGraph<f32>,
    pub velocity: ParamSet<f32>,
    pub whiten: WhitenStats,
    /// Completed epochs.
    pub epoch: usize,
    /// Stored in checkpoint metadata.
    pub config_hash: String,
    train: &'a Dataset,
    val: Option<&'a Dataset>,
}

const SHUFFLE_STREAM: u64 = 0xFFFF_FFFF;

impl<'a> Trainer<'a> {
    pub fn new(model: ModelGraph<f32>, train: &'a Dataset, val: Option<&'a Dataset>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if train.len() < 2 {
            return Err(Error::Data(format!("training needs at least 2 images, got {}", train.len())));
        }
        let whiten = compute_whiten(train)?;
        let velocity = model.zero_grads();
        Ok(Trainer {
            config,
            model,
            velocity,
            whiten,
            epoch: 0,
            config_hash: String::new(),
            train,
            val,
        })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(ckpt: &Checkpoint, train: &'a Dataset, val: Option<&'a Dataset>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = ckpt.to_model::<f32>()?;
        let velocity = ckpt.momentum::<f32>().unwrap_or_else(|| model.zero_grads());
        if velocity.len() != model.zero_grads().len() {
            return Err(Error::Checkpoint("momentum buffers do not match the model".into()));
        }
        let whiten = match &ckpt.meta.whiten {
            Some(w) => w.clone(),
            None => compute_whiten(train)?,
        };
        Ok(Trainer {
            config,
            model,
            velocity,
            whiten,
            epoch: ckpt.meta.epoch,
            config_hash: ckpt.meta.config_hash.clone(),
            train,
            val,
        })
    }

    fn train_input(&self, idx: usize, epoch: usize, out_hw: (usize, usize)) -> Result<Tensor<f32>> {
        let img = &self.train.samples[idx].image;
        let mut r = rng::stream(self.config.seed, rng::image_stream(epoch, idx));
        let x = match self.config.augment {
            Augment::None => eval_transform(img, out_hw)?,
            Augment::CropOnly => random_resized_crop(img, out_hw, &mut r),
            Augment::CropFlip => {
                let c = random_resized_crop(img, out_hw, &mut r);
                horizontal_flip(&c, &mut r, self.config.flip_prob)
            }
        };
        apply_whiten(&x, &self.whiten)
    }

    /// Sample order of an epoch. Trailing remainders of a single image are
    /// dropped since batch norm needs two.
    pub fn epoch_batches(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng::stream(self.config.seed, rng::image_stream(epoch, SHUFFLE_STREAM as usize)));
        order
            .chunks(self.config.batch)
            .filter(|c| c.len() >= 2)
            .map(<[usize]>::to_vec)
            .collect()
    }

    /// One optimisation step on the given samples; returns (loss, hits).
    pub fn step(&mut self, indices: &[usize]) -> Result<(f64, usize)> {
        let (_, h, w) = self.model.arch().input;
        let epoch = self.epoch;
        let imgs: Vec<Tensor<f32>> = indices
            .par_iter()
            .map(|&i| self.train_input(i, epoch, (h, w)))
            .collect::<Result<_>>()?;
        let refs: Vec<&Tensor<f32>> = imgs.iter().collect();
        let x = Tensor::stack(&refs)?;
        let labels: Vec<usize> = indices.iter().map(|&i| self.train.samples[i].label).collect();
        let trace = self.model.run(&x, Mode::Train, None)?;
        let (loss, grad, hits) = softmax_cross_entropy(trace.final_output(), &labels)?;
        let grads = self.model.backward(&trace, vec![(self.model.output_index(), grad)], true)?;
        self.model.commit_bn_stats(&trace);
        let params = grads.params.expect("parameter gradients requested");
        sgd_step(&mut self.model, &params, &mut self.velocity, &self.config, epoch)?;
        Ok((loss, hits))
    }

    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let batches = self.epoch_batches(self.epoch);
        let (mut loss_sum, mut hits, mut seen) = (0.0f64, 0usize, 0usize);
        for b in &batches {
            let (loss, h) = self.step(b)?;
            loss_sum += loss * b.len() as f64;
            hits += h;
            seen += b.len();
        }
        self.epoch += 1;
        let train = EvalResult {
            loss: loss_sum / seen.max(1) as f64,
            top1: hits as f64 / seen.max(1) as f64,
        };
        let val = match self.val {
            Some(v) if !v.is_empty() => Some(evaluate(&self.model, v, Some(&self.whiten), self.config.eval_batch)?),
            _ => None,
        };
        Ok(EpochMetrics {
            epoch: self.epoch,
            train,
            val,
        })
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut meta = CheckpointMeta::new(self.model.arch().clone());
        meta.epoch = self.epoch;
        meta.seed = self.config.seed;
        meta.config_hash = self.config_hash.clone();
        meta.whiten = Some(self.whiten.clone());
        meta.extra
            .insert("train_config".into(), serde_json::to_value(&self.config)?);
        Ok(self.model.to_checkpoint(meta, Some(&self.velocity)))
    }
}

pub const METRICS_HEADER: [&str; 4] = ["epoch", "split", "loss", "top1"];

pub fn metrics_rows(m: &EpochMetrics) -> Vec<Vec<String>> {
    let row = |split: &str, r: &EvalResult| vec![m.epoch.to_string(), split.to_string(), r.loss.to_string(), r.top1.to_string()];
    let mut rows = vec![row("train", &m.train)];
    if let Some(v) = &m.val {
        rows.push(row("val", v));
    }
    rows
}

/// Appends rows to a metrics TSV, writing the header for a new file.
pub fn append_metrics(path: &Path, m: &EpochMetrics) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(&METRICS_HEADER.join("\t"));
        text.push('\n');
    }
    for r in metrics_rows(m) {
        text.push_str(&r.join("\t"));
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch-{epoch:03}.nsck"))
}

/// Trains until `config.epochs` epochs are complete, writing
/// `epoch-NNN.nsck` and appending to `metrics.tsv` in `out_dir` after each.
pub fn train(trainer: &mut Trainer<'_>, out_dir: Option<&Path>) -> Result<Vec<EpochMetrics>> {
    let mut log = Vec::new();
    while trainer.epoch < trainer.config.epochs {
        let m = trainer.run_epoch()?;
        if let Some(dir) = out_dir {
            trainer.checkpoint()?.save(checkpoint_path(dir, m.epoch))?;
            append_metrics(&dir.join("metrics.tsv"), &m)?;
        }
        log::info!(
            "epoch {} train loss {:.4} top1 {:.4}{}",
            m.epoch,
            m.train.loss,
            m.train.top1,
            m.val.map(|v| format!(" val loss {:.4} top1 {:.4}", v.loss, v.top1)).unwrap_or_default()
        );
        log.push(m);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Sample, Split};
    use crate::graph::{ArchSpec, Family, ParamTensor};

    #[test]
    fn paper_schedule() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(0), 0.01);
        assert_eq!(c.lr_at(29), 0.01);
        assert!((c.lr_at(30) - 0.001).abs() < 1e-18);
        assert!((c.lr_at(60) - 0.0001).abs() < 1e-18);
        assert!((c.lr_at(89) - 0.0001).abs() < 1e-18);
    }

    fn single_param_model() -> (ModelGraph<f64>, String) {
        let m: ModelGraph<f64> = ArchSpec::scaled(Family::Plain, &[1], 2, (3, 4, 4), 2).build().unwrap();
        (m, "stem.conv.weight".to_string())
    }

    fn grads_with(model: &ModelGraph<f64>, name: &str, g: f64) -> ParamSet<f64> {
        let mut set = model.zero_grads();
        set.get_mut(name).unwrap().values.iter_mut().for_each(|v| *v = g);
        set
    }

    #[test]
    fn vanilla_and_momentum_recurrences() {
        let (mut m, name) = single_param_model();
        let theta0 = m.params().get(&name).unwrap().values.clone();
        let cfg = TrainConfig {
            momentum: 0.0,
            weight_decay: 0.0,
            lr0: 0.5,
            ..TrainConfig::default()
        };
        let g = grads_with(&m, &name, 0.25);
        let mut v = m.zero_grads();
        sgd_step(&mut m, &g, &mut v, &cfg, 0).unwrap();
        let theta1 = m.params().get(&name).unwrap().values.clone();
        for (a, b) in theta0.iter().zip(&theta1) {
            assert_eq!(*b, a - 0.5 * 0.25);
        }

        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut v = m.zero_grads();
        sgd_step(&mut m, &g, &mut v, &cfg, 0).unwrap();
        sgd_step(&mut m, &g, &mut v, &cfg, 0).unwrap();
        let vel: &ParamTensor<f64> = v.get(&name).unwrap();
        assert!(vel.values.iter().all(|&x| (x - 1.9 * 0.25).abs() < 1e-15));
    }

    #[test]
    fn decay_hits_only_weights() {
        let (mut m, _) = single_param_model();
        let before = m.params();
        let cfg = TrainConfig {
            momentum: 0.0,
            weight_decay: 0.1,
            lr0: 1.0,
            ..TrainConfig::default()
        };
        let zero = m.zero_grads();
        let mut v = m.zero_grads();
        sgd_step(&mut m, &zero, &mut v, &cfg, 0).unwrap();
        let after = m.params();
        for (a, b) in before.iter().zip(after.iter()) {
            let changed = a.values != b.values;
            let nonzero = a.values.iter().any(|&x| x != 0.0);
            assert_eq!(changed, a.role == ParamRole::Weight && nonzero, "{}", a.name);
        }
    }

    #[test]
    fn nan_gradient_names_layer() {
        let (mut m, name) = single_param_model();
        let g = grads_with(&m, &name, f64::NAN);
        let mut v = m.zero_grads();
        let err = sgd_step(&mut m, &g, &mut v, &TrainConfig::default(), 0).unwrap_err();
        assert!(err.to_string().contains("stem.conv"), "{err}");
    }

    #[test]
    fn cross_entropy_reference_values() {
        let logits = Tensor::<f64>::zeros((10, 10, 1, 1));
        let labels: Vec<usize> = (0..10).collect();
        let (loss, _, _) = softmax_cross_entropy(&logits, &labels).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-15);
        let onehot = Tensor::<f64>::from_fn((4, 3, 1, 1), |n, c, _, _| if c == n % 3 { 20.0 } else { 0.0 });
        let (_, _, hits) = softmax_cross_entropy(&onehot, &[0, 1, 2, 0]).unwrap();
        assert_eq!(hits, 4);
    }

    fn two_blobs(n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| {
                let label = i % 2;
                let jitter = (i as f32 * 0.37).sin() * 0.05;
                let image = Tensor::from_fn((1, 3, 6, 6), |_, c, y, x| {
                    let base = if (c == 0) == (label == 0) { 0.8 } else { 0.2 };
                    base + jitter + 0.01 * ((x + y) % 3) as f32
                });
                Sample {
                    id: format!("t{i:03}"),
                    image,
                    label,
                }
            })
            .collect();
        Dataset::new(samples, 2, Split::Train).unwrap()
    }

    #[test]
    fn separable_toy_converges() {
        let ds = two_blobs(16);
        let model = ArchSpec::scaled(Family::Resnet, &[1], 4, (3, 6, 6), 2).with_seed(3).build().unwrap();
        let cfg = TrainConfig {
            lr0: 0.05,
            batch: 8,
            augment: Augment::None,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(model, &ds, None, cfg).unwrap();
        let mut last = f64::INFINITY;
        for _ in 0..100 {
            last = t.run_epoch().unwrap().train.loss;
        }
        assert!(last < 0.1, "loss after 200 steps: {last}");
        let eval = evaluate(&t.model, &ds, Some(&t.whiten), 5).unwrap();
        assert_eq!(eval.top1, 1.0);
        assert_eq!(eval, evaluate(&t.model, &ds, Some(&t.whiten), 5).unwrap());
    }

    #[test]
    fn evaluate_is_batch_size_independent_in_accuracy() {
        let ds = two_blobs(6);
        let model = ArchSpec::scaled(Family::Plain, &[1], 4, (3, 6, 6), 2).build().unwrap();
        let a = evaluate(&model, &ds, None, 1).unwrap();
        let b = evaluate(&model, &ds, None, 4).unwrap();
        assert_eq!(a.top1, b.top1);
        assert!((a.loss - b.loss).abs() < 1e-6);
    }
}
