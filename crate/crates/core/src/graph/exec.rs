use std::collections::BTreeMap;

use super::{LayerKind, ModelGraph, Mode, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{
    add_forward, batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_backward_input, conv2d_forward,
    global_avgpool_backward, global_avgpool_forward, linear_backward, linear_forward, maxpool_backward,
    maxpool_forward, relu_backward, relu_forward, BnCache, Scalar, Tensor,
};

enum Cache<T> {
    None,
    Bn(BnCache<T>),
    Pool(Vec<usize>),
}

/// Every layer output of one forward pass plus what backward needs.
pub struct Trace<T> {
    pub mode: Mode,
    outputs: Vec<Option<Tensor<T>>>,
    caches: Vec<Cache<T>>,
    last: usize,
}

impl<T: Scalar> Trace<T> {
    /// Output of layer `idx`, if it was computed.
    pub fn output(&self, idx: usize) -> Option<&Tensor<T>> {
        self.outputs.get(idx).and_then(|o| o.as_ref())
    }

    pub fn last(&self) -> usize {
        self.last
    }

    pub fn final_output(&self) -> &Tensor<T> {
        self.outputs[self.last].as_ref().expect("last layer computed")
    }

    /// Batch statistics of each train-mode BN layer, by layer index.
    pub fn bn_caches(&self) -> impl Iterator<Item = (usize, &BnCache<T>)> {
        self.caches.iter().enumerate().filter_map(|(i, c)| match c {
            Cache::Bn(b) => Some((i, b)),
            _ => None,
        })
    }
}

/// Result of a backward pass.
pub struct Gradients<T> {
    pub input: Tensor<T>,
    /// Present when parameter gradients were requested; trainable order.
    pub params: Option<ParamSet<T>>,
}

/// Which unit of a channel an objective reads.
#[derive(Copy, Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeuronSelector {
    /// The spatial centre `(H/2, W/2)` of the feature map.
    Center,
    At(usize, usize),
    /// Spatial mean of the channel.
    ChannelMean,
}

/// Scalar read-out of one captured activation, summed over the batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    pub layer: String,
    pub channel: usize,
    pub selector: NeuronSelector,
}

impl Objective {
    pub fn new(layer: impl Into<String>, channel: usize, selector: NeuronSelector) -> Self {
        Objective {
            layer: layer.into(),
            channel,
            selector,
        }
    }
}

pub type Hook<'a, T> = &'a mut dyn FnMut(usize, &mut Tensor<T>);

impl<T: Scalar> ModelGraph<T> {
    /// Executes layers `0..=last`. `hook` may rewrite each output in place
    /// before downstream layers consume it.
    pub fn run_until(&self, x: &Tensor<T>, mode: Mode, last: usize, mut hook: Option<Hook<'_, T>>) -> Result<Trace<T>> {
        let expect = self.input_shape(x.shape().n);
        if x.shape().c != expect.c {
            return Err(Error::shape("model input", x.shape(), expect));
        }
        if last >= self.layers.len() {
            return Err(Error::InvalidArgument(format!("layer index {last} out of range")));
        }
        let mut outputs: Vec<Option<Tensor<T>>> = Vec::with_capacity(last + 1);
        let mut caches = Vec::with_capacity(last + 1);
        for (idx, layer) in self.layers[..=last].iter().enumerate() {
            let src = || -> &Tensor<T> { outputs[layer.inputs[0]].as_ref().expect("topological order") };
            let (mut out, cache) = match &layer.kind {
                LayerKind::Input => (x.clone(), Cache::None),
                LayerKind::Conv { weights, bias, geom } => {
                    (conv2d_forward(src(), weights, bias.as_deref(), geom)?, Cache::None)
                }
                LayerKind::BatchNorm(state) => {
                    let (y, c) = batchnorm_forward(src(), state, mode)?;
                    (y, Cache::Bn(c))
                }
                LayerKind::Relu => (relu_forward(src()), Cache::None),
                LayerKind::MaxPool(g) => {
                    let (y, idx) = maxpool_forward(src(), g)?;
                    (y, Cache::Pool(idx))
                }
                LayerKind::GlobalAvgPool => (global_avgpool_forward(src()), Cache::None),
                LayerKind::Linear(lw) => (linear_forward(src(), lw)?, Cache::None),
                LayerKind::Add => {
                    let b = outputs[layer.inputs[1]].as_ref().expect("topological order");
                    (add_forward(src(), b)?, Cache::None)
                }
            };
            if let Some(h) = hook.as_mut() {
                h(idx, &mut out);
            }
            out.check_finite(&layer.name)?;
            outputs.push(Some(out));
            caches.push(cache);
        }
        Ok(Trace {
            mode,
            outputs,
            caches,
            last,
        })
    }

    pub fn run(&self, x: &Tensor<T>, mode: Mode, hook: Option<Hook<'_, T>>) -> Result<Trace<T>> {
        self.run_until(x, mode, self.output_index(), hook)
    }

    /// Full forward pass returning the logits and copies of the requested
    /// layer outputs (names or aliases).
    pub fn forward(&self, x: &Tensor<T>, mode: Mode, capture: &[&str]) -> Result<(Tensor<T>, BTreeMap<String, Tensor<T>>)> {
        let idx: Vec<usize> = capture.iter().map(|n| self.resolve(n)).collect::<Result<_>>()?;
        let trace = self.run(x, mode, None)?;
        let captured = capture
            .iter()
            .zip(idx)
            .map(|(n, i)| (n.to_string(), trace.output(i).cloned().expect("computed")))
            .collect();
        Ok((trace.final_output().clone(), captured))
    }

    /// Folds train-mode batch statistics into the running averages.
    pub fn commit_bn_stats(&mut self, trace: &Trace<T>) {
        if trace.mode != Mode::Train {
            return;
        }
        for (i, cache) in trace.bn_caches() {
            if let LayerKind::BatchNorm(state) = &mut self.layers[i].kind {
                state.update_running(cache);
            }
        }
    }

    /// Reverse pass from one or more seeded layer gradients.
    pub fn backward(&self, trace: &Trace<T>, seeds: Vec<(usize, Tensor<T>)>, want_params: bool) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..=trace.last).map(|_| None).collect();
        for (idx, g) in seeds {
            if idx > trace.last {
                return Err(Error::InvalidArgument(format!(
                    "gradient seeded at layer {idx} beyond traced layer {}",
                    trace.last
                )));
            }
            let out = trace.output(idx).expect("traced");
            if g.shape() != out.shape() {
                return Err(Error::shape("backward seed", g.shape(), out.shape()));
            }
            accumulate(&mut grads[idx], g);
        }
        let mut param_grads = want_params.then(|| self.zero_grads());

        for idx in (1..=trace.last).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let layer = &self.layers[idx];
            let input_idx = layer.inputs[0];
            let x = trace.output(input_idx).expect("traced");
            let name = &layer.name;
            let dx = match &layer.kind {
                LayerKind::Input => unreachable!("input is layer 0"),
                LayerKind::Conv { weights, bias, geom } => {
                    if let Some(pg) = param_grads.as_mut() {
                        let cg = conv2d_backward(&g, x, weights, bias.is_some(), geom)?;
                        add_into(pg, &format!("{name}.weight"), cg.w.data());
                        if let Some(b) = &cg.bias {
                            add_into(pg, &format!("{name}.bias"), b);
                        }
                        cg.x
                    } else {
                        conv2d_backward_input(&g, x, weights, geom)?
                    }
                }
                LayerKind::BatchNorm(state) => {
                    let Cache::Bn(cache) = &trace.caches[idx] else { unreachable!() };
                    let bg = batchnorm_backward(&g, cache, state)?;
                    if let Some(pg) = param_grads.as_mut() {
                        add_into(pg, &format!("{name}.gamma"), &bg.gamma);
                        add_into(pg, &format!("{name}.beta"), &bg.beta);
                    }
                    bg.x
                }
                LayerKind::Relu => relu_backward(&g, trace.output(idx).expect("traced"))?,
                LayerKind::MaxPool(_) => {
                    let Cache::Pool(argmax) = &trace.caches[idx] else { unreachable!() };
                    maxpool_backward(&g, argmax, x.shape())?
                }
                LayerKind::GlobalAvgPool => global_avgpool_backward(&g, x.shape())?,
                LayerKind::Linear(lw) => {
                    let lg = linear_backward(&g, x, lw)?;
                    if let Some(pg) = param_grads.as_mut() {
                        add_into(pg, &format!("{name}.weight"), &lg.weight);
                        add_into(pg, &format!("{name}.bias"), &lg.bias);
                    }
                    lg.x
                }
                LayerKind::Add => {
                    accumulate(&mut grads[layer.inputs[1]], g.clone());
                    g
                }
            };
            accumulate(&mut grads[input_idx], dx);
        }
        let input = grads[0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(trace.output(0).expect("input traced").shape()));
        Ok(Gradients {
            input,
            params: param_grads,
        })
    }

    /// Value of `objective` on `x` and its exact gradient with respect to `x`.
    pub fn backward_to_input(&self, x: &Tensor<T>, objective: &Objective) -> Result<(T, Tensor<T>)> {
        let idx = self.resolve(&objective.layer)?;
        let trace = self.run_until(x, Mode::Eval, idx, None)?;
        let act = trace.output(idx).expect("traced");
        let (value, seed) = objective_seed(act, objective)?;
        let grads = self.backward(&trace, vec![(idx, seed)], false)?;
        Ok((value, grads.input))
    }
}

/// Objective value over a captured activation, and the gradient of that
/// value with respect to the activation.
pub(crate) fn objective_seed<T: Scalar>(act: &Tensor<T>, objective: &Objective) -> Result<(T, Tensor<T>)> {
    let s = act.shape();
    if objective.channel >= s.c {
        return Err(Error::UnknownChannel {
            layer: objective.layer.clone(),
            channel: objective.channel,
            channels: s.c,
        });
    }
    let mut seed = Tensor::zeros(s);
    let mut value = T::zero();
    let c = objective.channel;
    match objective.selector {
        NeuronSelector::Center | NeuronSelector::At(..) => {
            let (i, j) = match objective.selector {
                NeuronSelector::At(i, j) => (i, j),
                _ => (s.h / 2, s.w / 2),
            };
            if i >= s.h || j >= s.w {
                return Err(Error::NeuronOutOfBounds { i, j, h: s.h, w: s.w });
            }
            for n in 0..s.n {
                value += act.at(n, c, i, j);
                *seed.at_mut(n, c, i, j) = T::one();
            }
        }
        NeuronSelector::ChannelMean => {
            let inv = T::one() / T::from_usize(s.plane()).unwrap();
            for n in 0..s.n {
                value += act.plane(n, c).iter().copied().sum::<T>() * inv;
                seed.plane_mut(n, c).fill(inv);
            }
        }
    }
    Ok((value, seed))
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}

fn add_into<T: Scalar>(set: &mut ParamSet<T>, name: &str, values: &[T]) {
    let p = set.get_mut(name).expect("gradient slot exists for every trainable parameter");
    for (a, b) in p.values.iter_mut().zip(values) {
        *a += *b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_scaled, Family};

    fn toy() -> ModelGraph<f64> {
        build_scaled(Family::Resnet, &[1, 1], 4, (3, 8, 8), 3).unwrap()
    }

    #[test]
    fn eval_forward_is_pure() {
        let m = toy();
        let x = Tensor::<f64>::from_fn((2, 3, 8, 8), |n, c, h, w| ((n * 97 + c * 31 + h * 7 + w) as f64).sin());
        let (a, ca) = m.forward(&x, Mode::Eval, &["maxpool", "layer3"]).unwrap();
        let (b, cb) = m.forward(&x, Mode::Eval, &["maxpool", "layer3"]).unwrap();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
        assert_eq!(a.shape().c, 3);
    }

    #[test]
    fn unknown_capture_is_an_error() {
        let m = toy();
        let x = Tensor::<f64>::zeros((1, 3, 8, 8));
        assert!(matches!(m.forward(&x, Mode::Eval, &["bogus"]), Err(Error::UnknownLayer(_))));
    }

    #[test]
    fn channel_mean_gradient_is_mean_of_neuron_gradients() {
        let m = toy();
        let x = Tensor::<f64>::from_fn((1, 3, 8, 8), |_, c, h, w| ((c * 64 + h * 8 + w) as f64 * 0.37).cos());
        let layer = "stage1.block1.conv2";
        let (_, gmean) = m.backward_to_input(&x, &Objective::new(layer, 1, NeuronSelector::ChannelMean)).unwrap();
        let mut acc = Tensor::<f64>::zeros(x.shape());
        for i in 0..4 {
            for j in 0..4 {
                let (_, g) = m.backward_to_input(&x, &Objective::new(layer, 1, NeuronSelector::At(i, j))).unwrap();
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b / 16.0;
                }
            }
        }
        for (a, b) in acc.data().iter().zip(gmean.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dead_relu_neuron_has_zero_gradient() {
        let mut m = toy();
        let idx = m.index_of("stem.bn").unwrap();
        if let LayerKind::BatchNorm(s) = &mut m.layers[idx].kind {
            s.gamma[2] = 0.0;
            s.beta[2] = -1.0;
        }
        let x = Tensor::<f64>::from_fn((1, 3, 8, 8), |_, c, h, w| ((c + h * w) as f64).sin());
        let (v, g) = m.backward_to_input(&x, &Objective::new("stem.relu", 2, NeuronSelector::Center)).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn objective_errors() {
        let m = toy();
        let x = Tensor::<f64>::zeros((1, 3, 8, 8));
        assert!(m.backward_to_input(&x, &Objective::new("nope", 0, NeuronSelector::Center)).is_err());
        assert!(matches!(
            m.backward_to_input(&x, &Objective::new("stem.conv", 99, NeuronSelector::Center)),
            Err(Error::UnknownChannel { .. })
        ));
        assert!(matches!(
            m.backward_to_input(&x, &Objective::new("stem.conv", 0, NeuronSelector::At(8, 0))),
            Err(Error::NeuronOutOfBounds { .. })
        ));
    }

    #[test]
    fn train_mode_updates_running_stats_only_on_commit() {
        let mut m = toy();
        let x = Tensor::<f64>::from_fn((2, 3, 8, 8), |n, c, h, w| ((n + c * 3 + h * w) as f64).cos());
        let before = m.params();
        let trace = m.run(&x, Mode::Train, None).unwrap();
        assert_eq!(m.params(), before);
        m.commit_bn_stats(&trace);
        assert_ne!(m.params(), before);
    }
}
