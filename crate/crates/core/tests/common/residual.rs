//! Residual blocks whose branch computes zero.

use super::rng;
use netscope::graph::{LayerKind, ParamRole};
use netscope::{ArchSpec, Family, Mode, ModelGraph, Tensor};
use rand::Rng;

pub fn resnet34(input: usize) -> ModelGraph<f32> {
    let mut arch = ArchSpec::resnet34(Family::Resnet, 10).with_seed(3);
    arch.input = (3, input, input);
    let mut m: ModelGraph<f32> = arch.build().unwrap();
    let mut r = rng(77);
    // non-trivial statistics everywhere except on the branch outputs
    m.visit_params_mut(|name, role, v| {
        if name.ends_with(".bn2.beta") || name.ends_with(".bn2.running_mean") {
            return;
        }
        match role {
            ParamRole::Gamma => v.iter_mut().for_each(|x| *x = r.random_range(0.5..1.5)),
            ParamRole::Beta | ParamRole::RunningMean => v.iter_mut().for_each(|x| *x = r.random_range(-0.2..0.2)),
            ParamRole::RunningVar => v.iter_mut().for_each(|x| *x = r.random_range(0.5..2.0)),
            _ => {}
        }
    });
    m
}

pub fn zero_branches(m: &mut ModelGraph<f32>) -> usize {
    let mut n = 0;
    for layer in m.layers_mut() {
        if layer.name.ends_with(".conv2") {
            if let LayerKind::Conv { weights, .. } = &mut layer.kind {
                weights.data_mut().iter_mut().for_each(|w| *w = 0.0);
                n += 1;
            }
        }
    }
    n
}

/// (add, skip producer, relu after add) for every block.
pub fn blocks(m: &ModelGraph<f32>) -> Vec<(usize, usize, usize)> {
    (0..m.layers().len())
        .filter(|&i| matches!(m.layer(i).kind, LayerKind::Add))
        .map(|i| {
            let ins = &m.layer(i).inputs;
            let skip = *ins.iter().find(|&&j| !m.layer(j).name.ends_with(".bn2")).unwrap();
            let relu = m.index_of(&m.layer(i).name.replace(".add", ".relu2")).unwrap();
            (i, skip, relu)
        })
        .collect()
}

/// Asserts every block sum equals its skip input; returns the number of
/// identity-skip blocks whose output equals the block input.
pub fn check(m: &ModelGraph<f32>, x: &Tensor<f32>, mode: Mode) -> usize {
    let trace = m.run(x, mode, None).unwrap();
    let mut identity = 0;
    for (add, skip, relu) in blocks(m) {
        let (a, s) = (trace.output(add).unwrap(), trace.output(skip).unwrap());
        assert_eq!(a.data(), s.data(), "{}", m.layer(add).name);
        if !m.layer(skip).name.starts_with("downsample") {
            assert_eq!(trace.output(relu).unwrap().data(), s.data(), "{}", m.layer(relu).name);
            identity += 1;
        }
    }
    identity
}

pub fn zeroed_branches_pass_the_skip_through() -> usize {
    let mut m = resnet34(224);
    assert_eq!(zero_branches(&mut m), 16);
    assert_eq!(blocks(&m).len(), 16);
    let mut r = rng(78);
    let x: Tensor<f32> = Tensor::from_fn((1, 3, 224, 224), |_, _, _, _| r.random_range(-2.0..2.0));
    check(&m, &x, Mode::Eval)
}

pub fn zeroed_branches_pass_the_skip_through_in_train_mode() -> usize {
    let mut m = resnet34(64);
    zero_branches(&mut m);
    let mut r = rng(79);
    let x: Tensor<f32> = Tensor::from_fn((2, 3, 64, 64), |_, _, _, _| r.random_range(-2.0..2.0));
    check(&m, &x, Mode::Train)
}
