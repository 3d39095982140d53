use serde::{Deserialize, Serialize};

use super::{LayerKind, ModelGraph};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// What a parameter tensor is for; decides optimisation and decay grouping.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamRole {
    Weight,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamRole {
    pub fn suffix(self) -> &'static str {
        match self {
            ParamRole::Weight => "weight",
            ParamRole::Bias => "bias",
            ParamRole::Gamma => "gamma",
            ParamRole::Beta => "beta",
            ParamRole::RunningMean => "running_mean",
            ParamRole::RunningVar => "running_var",
        }
    }

    /// Running statistics are buffers, not optimised.
    pub fn trainable(self) -> bool {
        !matches!(self, ParamRole::RunningMean | ParamRole::RunningVar)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor<T> {
    pub name: String,
    pub role: ParamRole,
    pub dims: Vec<usize>,
    pub values: Vec<T>,
}

/// Ordered collection of named parameter tensors (also used for gradients
/// and momentum buffers, which share the order of the trainable subset).
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<T>(pub Vec<ParamTensor<T>>);

impl<T: Scalar> ParamSet<T> {
    pub fn zeros_like(&self) -> Self {
        ParamSet(
            self.0
                .iter()
                .map(|p| ParamTensor {
                    name: p.name.clone(),
                    role: p.role,
                    dims: p.dims.clone(),
                    values: vec![T::zero(); p.values.len()],
                })
                .collect(),
        )
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor<T>> {
        self.0.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamTensor<T>> {
        self.0.iter_mut().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor<T>> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<T: Scalar> ModelGraph<T> {
    /// Visits every parameter slice in a stable order.
    pub fn visit_params(&self, mut f: impl FnMut(&str, ParamRole, Vec<usize>, &[T])) {
        for layer in &self.layers {
            let n = &layer.name;
            match &layer.kind {
                LayerKind::Conv { weights, bias, .. } => {
                    f(&format!("{n}.weight"), ParamRole::Weight, weights.dims().to_vec(), weights.data());
                    if let Some(b) = bias {
                        f(&format!("{n}.bias"), ParamRole::Bias, vec![b.len()], b);
                    }
                }
                LayerKind::BatchNorm(s) => {
                    let c = vec![s.channels()];
                    f(&format!("{n}.gamma"), ParamRole::Gamma, c.clone(), &s.gamma);
                    f(&format!("{n}.beta"), ParamRole::Beta, c.clone(), &s.beta);
                    f(&format!("{n}.running_mean"), ParamRole::RunningMean, c.clone(), &s.running_mean);
                    f(&format!("{n}.running_var"), ParamRole::RunningVar, c, &s.running_var);
                }
                LayerKind::Linear(lw) => {
                    f(&format!("{n}.weight"), ParamRole::Weight, vec![lw.out_features, lw.in_features], &lw.weight);
                    f(&format!("{n}.bias"), ParamRole::Bias, vec![lw.out_features], &lw.bias);
                }
                _ => {}
            }
        }
    }

    /// Mutable counterpart of [`ModelGraph::visit_params`], same order.
    pub fn visit_params_mut(&mut self, mut f: impl FnMut(&str, ParamRole, &mut [T])) {
        for layer in &mut self.layers {
            let n = &layer.name;
            match &mut layer.kind {
                LayerKind::Conv { weights, bias, .. } => {
                    f(&format!("{n}.weight"), ParamRole::Weight, weights.data_mut());
                    if let Some(b) = bias {
                        f(&format!("{n}.bias"), ParamRole::Bias, b);
                    }
                }
                LayerKind::BatchNorm(s) => {
                    f(&format!("{n}.gamma"), ParamRole::Gamma, &mut s.gamma);
                    f(&format!("{n}.beta"), ParamRole::Beta, &mut s.beta);
                    f(&format!("{n}.running_mean"), ParamRole::RunningMean, &mut s.running_mean);
                    f(&format!("{n}.running_var"), ParamRole::RunningVar, &mut s.running_var);
                }
                LayerKind::Linear(lw) => {
                    f(&format!("{n}.weight"), ParamRole::Weight, &mut lw.weight);
                    f(&format!("{n}.bias"), ParamRole::Bias, &mut lw.bias);
                }
                _ => {}
            }
        }
    }

    /// Snapshot of all parameters and buffers.
    pub fn params(&self) -> ParamSet<T> {
        let mut out = Vec::new();
        self.visit_params(|name, role, dims, values| {
            out.push(ParamTensor {
                name: name.to_string(),
                role,
                dims,
                values: values.to_vec(),
            })
        });
        ParamSet(out)
    }

    /// Zero-valued set shaped like the trainable parameters.
    pub fn zero_grads(&self) -> ParamSet<T> {
        let mut out = Vec::new();
        self.visit_params(|name, role, dims, values| {
            if role.trainable() {
                out.push(ParamTensor {
                    name: name.to_string(),
                    role,
                    dims,
                    values: vec![T::zero(); values.len()],
                })
            }
        });
        ParamSet(out)
    }

    /// Overwrites parameters by name; every model parameter must be present.
    pub fn load_params(&mut self, set: &ParamSet<T>) -> Result<()> {
        let mut missing = None;
        self.visit_params_mut(|name, _, values| {
            if missing.is_some() {
                return;
            }
            match set.get(name) {
                Some(p) if p.values.len() == values.len() => values.copy_from_slice(&p.values),
                Some(p) => {
                    missing = Some(format!("`{name}` has {} values, expected {}", p.values.len(), values.len()))
                }
                None => missing = Some(format!("missing tensor `{name}`")),
            }
        });
        match missing {
            Some(msg) => Err(Error::Checkpoint(msg)),
            None => Ok(()),
        }
    }
}
