//! Activation maximisation by Adam gradient ascent on the input.
//!
//! Each step first shrinks the input, `x ← (1 − lr·λ)·x`, then takes an Adam
//! step along `+∇f`. Defaults: 31 steps from a zero image, lr 0.1,
//! λ = 1e-6, β = (0.9, 0.999), ε = 1e-8.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{invert_whiten, WhitenStats};
use crate::error::{Error, Result};
use crate::graph::{ModelGraph, NeuronSelector, Objective};
use crate::ppm;
use crate::rf::{self, ReceptiveField};
use crate::tensor::{Scalar, Shape, Tensor};
use crate::tsv;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActMode {
    /// Centre neuron `(H/2, W/2)` of the channel.
    NeuronCenter,
    /// Spatial mean of the channel.
    ChannelMean,
}

impl std::str::FromStr for ActMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neuron" | "neuron_center" => Ok(ActMode::NeuronCenter),
            "channel" | "channel_mean" => Ok(ActMode::ChannelMean),
            other => Err(Error::InvalidArgument(format!("unknown actmax mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActMaxConfig {
    pub layer: String,
    pub channel: usize,
    pub mode: ActMode,
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Input `(H, W)`; the model's nominal size when `None`.
    pub input_hw: Option<(usize, usize)>,
}

impl ActMaxConfig {
    pub fn new(layer: impl Into<String>, channel: usize, mode: ActMode) -> Self {
        ActMaxConfig {
            layer: layer.into(),
            channel,
            mode,
            steps: 31,
            lr: 0.1,
            weight_decay: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            input_hw: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "actmax needs steps ≥ 1, lr > 0, weight decay ≥ 0 (got {}, {}, {})",
                self.steps, self.lr, self.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::InvalidArgument("Adam betas must lie in [0, 1) and eps be positive".into()));
        }
        Ok(())
    }

    pub fn objective(&self) -> Objective {
        let selector = match self.mode {
            ActMode::NeuronCenter => NeuronSelector::Center,
            ActMode::ChannelMean => NeuronSelector::ChannelMean,
        };
        Objective::new(self.layer.clone(), self.channel, selector)
    }

    fn input_shape<T: Scalar>(&self, model: &ModelGraph<T>) -> Shape {
        let (c, h, w) = model.arch().input;
        let (h, w) = self.input_hw.unwrap_or((h, w));
        Shape::new(1, c, h, w)
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub step: usize,
    /// Objective at the iterate before this step's update.
    pub objective: f64,
    pub l2_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActMaxResult<T> {
    pub x_star: Tensor<T>,
    /// One point per step; point 0 is the initial input.
    pub trajectory: Vec<TrajectoryPoint>,
    /// Objective at `x_star`.
    pub final_activation: f64,
}

impl<T> ActMaxResult<T> {
    pub fn initial_activation(&self) -> f64 {
        self.trajectory[0].objective
    }
}

/// Objective value at `x` and its gradient with respect to `x`.
pub fn activation_objective<T: Scalar>(
    model: &ModelGraph<T>,
    x: &Tensor<T>,
    config: &ActMaxConfig,
) -> Result<(T, Tensor<T>)> {
    model.backward_to_input(x, &config.objective())
}

/// Ascent from a zero image.
pub fn adam_ascent<T: Scalar>(model: &ModelGraph<T>, config: &ActMaxConfig) -> Result<ActMaxResult<T>> {
    adam_ascent_from(model, config, Tensor::zeros(config.input_shape(model)))
}

pub fn adam_ascent_from<T: Scalar>(
    model: &ModelGraph<T>,
    config: &ActMaxConfig,
    init: Tensor<T>,
) -> Result<ActMaxResult<T>> {
    config.validate()?;
    let lr = T::from_f64_lossy(config.lr);
    let shrink = T::from_f64_lossy(1.0 - config.lr * config.weight_decay);
    let (b1, b2) = (T::from_f64_lossy(config.beta1), T::from_f64_lossy(config.beta2));
    let eps = T::from_f64_lossy(config.eps);
    let one = T::one();

    let mut x = init;
    let mut m = vec![T::zero(); x.data().len()];
    let mut v = vec![T::zero(); x.data().len()];
    let mut trajectory = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let (f, g) = activation_objective(model, &x, config)?;
        if !f.is_finite() {
            return Err(Error::Numeric(format!("objective is not finite at step {step}")));
        }
        trajectory.push(TrajectoryPoint {
            step,
            objective: f.to_f64_lossy(),
            l2_norm: x.l2_norm().to_f64_lossy(),
        });
        let t = (step + 1) as i32;
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        for (((xi, &gi), mi), vi) in x.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *xi = shrink * *xi + lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    let (f, _) = activation_objective(model, &x, config)?;
    if !f.is_finite() {
        return Err(Error::Numeric(format!("objective is not finite at step {}", config.steps)));
    }
    Ok(ActMaxResult {
        x_star: x,
        trajectory,
        final_activation: f.to_f64_lossy(),
    })
}

/// Receptive field of the centre neuron of the target layer.
pub fn center_field<T: Scalar>(model: &ModelGraph<T>, config: &ActMaxConfig) -> Result<ReceptiveField> {
    let input = config.input_shape(model);
    let idx = model.resolve(&config.layer)?;
    let fm = model.shapes(input)?[idx];
    rf::project(model, &config.layer, (fm.h / 2, fm.w / 2), (input.h, input.w))
}

pub const TRAJECTORY_HEADER: [&str; 3] = ["step", "objective", "l2_norm"];

/// Writes the un-whitened, min-max normalised input (optionally cropped to
/// `crop`) as PPM and the trajectory as TSV.
pub fn export_actmax<T: Scalar>(
    result: &ActMaxResult<T>,
    whiten: Option<&WhitenStats>,
    crop: Option<&ReceptiveField>,
    image_path: impl AsRef<Path>,
    trajectory_path: impl AsRef<Path>,
    scale: usize,
) -> Result<()> {
    let x = match whiten {
        Some(w) => invert_whiten(&result.x_star, w)?,
        None => result.x_star.clone(),
    };
    let x = match crop {
        Some(field) => rf::extract_patch(&x, field)?,
        None => x,
    };
    ppm::render(&ppm::min_max_normalize(&x), 0)
        .upscale(scale)
        .save(image_path)?;
    tsv::write(
        trajectory_path,
        &TRAJECTORY_HEADER,
        result
            .trajectory
            .iter()
            .map(|p| vec![p.step.to_string(), p.objective.to_string(), p.l2_norm.to_string()]),
    )
}
