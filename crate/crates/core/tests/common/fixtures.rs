//! Small hand-edited models and the checks built on them.

use netscope::actmax::{adam_ascent, ActMaxConfig, ActMode};
use netscope::data::synthetic::gratings;
use netscope::data::{rng, Dataset};
use netscope::graph::{LayerKind, StemSpec};
use netscope::probe::{eval_noised, find_inactive, inject_noise_in_place, InactiveReport, NoiseMode, NoiseEvalResult};
use netscope::tensor::ConvWeights;
use netscope::{ArchSpec, Family, ModelGraph, Tensor};

pub fn conv_mut<'a>(m: &'a mut ModelGraph<f32>, name: &str) -> &'a mut ConvWeights<f32> {
    let idx = m.index_of(name).unwrap();
    match &mut m.layers_mut()[idx].kind {
        LayerKind::Conv { weights, .. } => weights,
        _ => panic!("{name} is not a conv"),
    }
}

pub fn set_beta(m: &mut ModelGraph<f32>, name: &str, c: usize, beta: f32) {
    let idx = m.index_of(name).unwrap();
    match &mut m.layers_mut()[idx].kind {
        LayerKind::BatchNorm(st) => st.beta[c] = beta,
        _ => panic!("{name} is not batch norm"),
    }
}

/// Stem channel `c` silenced: zero filter, negative shift.
pub fn kill_stem_channel(m: &mut ModelGraph<f32>, c: usize) {
    conv_mut(m, "stem.conv").filter_mut(c).iter_mut().for_each(|w| *w = 0.0);
    set_beta(m, "stem.bn", c, -1.0);
}

pub fn small(family: Family, seed: u64) -> ModelGraph<f32> {
    ArchSpec::scaled(family, &[1, 1], 4, (3, 16, 16), 4).with_seed(seed).build().unwrap()
}

/// Sample mean of one million noise draws.
pub fn noise_mean() -> f64 {
    let mut x = Tensor::<f32>::zeros((1, 1, 1000, 1000));
    inject_noise_in_place(&mut x, &[0], &mut rng::stream(2024, 0));
    let zeros = x.data().iter().filter(|&&v| v == 0.0).count();
    assert!((zeros as f64 / 1e6 - 0.5).abs() < 0.005);
    x.data().iter().map(|&v| v as f64).sum::<f64>() / 1e6
}

pub fn empty_report_result() -> NoiseEvalResult {
    let ds = gratings(10, 16, 4, 2);
    let m = small(Family::Resnet, 2);
    let rep = InactiveReport {
        layer: "stem.relu".into(),
        inactive: vec![],
        max_activation: vec![],
        dataset: ds.fingerprint(),
        images: ds.len(),
    };
    eval_noised(&m, &ds, &rep, NoiseMode::All, 7, None, 4).unwrap()
}

/// Plain model whose dead stem channel feeds nothing downstream, unless
/// `restore` keeps its outgoing weights.
pub fn zero_downstream(restore: bool) -> (ModelGraph<f32>, Dataset, InactiveReport) {
    let ds = gratings(10, 16, 4, 3);
    let mut m = small(Family::Plain, 3);
    kill_stem_channel(&mut m, 2);
    if !restore {
        let w = conv_mut(&mut m, "stage1.block1.conv1");
        let [p, _, kh, kw] = w.dims();
        for o in 0..p {
            for i in 0..kh {
                for j in 0..kw {
                    *w.at_mut(o, 2, i, j) = 0.0;
                }
            }
        }
    }
    let rep = find_inactive(&m, &ds, "stem.relu", None, 4).unwrap();
    (m, ds, rep)
}

/// ΔL for each noise mode on the disconnected-channel fixture.
pub fn zero_downstream_deltas() -> Vec<f64> {
    let (m, ds, rep) = zero_downstream(false);
    assert_eq!(rep.inactive, [2]);
    [NoiseMode::All, NoiseMode::RandomOne]
        .into_iter()
        .map(|mode| eval_noised(&m, &ds, &rep, mode, 11, None, 4).unwrap().delta)
        .collect()
}

pub fn stem_only(kernel: usize, stride: usize, padding: usize, seed: u64) -> ModelGraph<f64> {
    let mut arch = ArchSpec::scaled(Family::Resnet, &[1], 4, (3, 12, 12), 2).with_seed(seed);
    arch.stem = StemSpec { kernel, stride, padding, pool: None };
    arch.build().unwrap()
}

/// Ascent without weight decay on a linear objective; asserts the
/// objective rises at every step and returns the number of runs.
pub fn linear_ascent_is_monotone() -> usize {
    let mut runs = 0;
    for seed in 0..4 {
        let m = stem_only(3, 1, 1, seed);
        for mode in [ActMode::ChannelMean, ActMode::NeuronCenter] {
            let mut cfg = ActMaxConfig::new("stem.conv", seed as usize % 4, mode);
            cfg.weight_decay = 0.0;
            let res = adam_ascent(&m, &cfg).unwrap();
            let mut prev = f64::NEG_INFINITY;
            for p in &res.trajectory {
                assert!(p.objective > prev, "step {}: {} after {prev}", p.step, p.objective);
                prev = p.objective;
            }
            assert!(res.final_activation > prev);
            runs += 1;
        }
    }
    runs
}
