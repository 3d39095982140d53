//! Analytic gradients against central finite differences in f64.
//! Each public check returns the number of randomized cases it ran.

use super::*;
use netscope::graph::{build_scaled, LayerKind, NeuronSelector, Objective, ParamRole};
use netscope::tensor::*;
use netscope::{Family, Mode, ModelGraph, Tensor};
use rand::Rng;

const TOL: f64 = 1e-6;

fn check(what: &str, analytic: &[f64], numeric: &[f64]) {
    let e = rel_err(analytic, numeric);
    assert!(e < TOL, "{what}: relative error {e:e}");
}

fn with_data(shape: Shape, v: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape, v.to_vec()).unwrap()
}

pub fn conv2d_gradients() -> usize {
    for case in 0..30 {
        let mut r = rng(case);
        let k = [1, 3, 5][r.random_range(0..3)];
        let (n, q, p) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4));
        let s = r.random_range(1..3);
        let pad = r.random_range(0..=k / 2);
        let (h, w) = (r.random_range(k..k + 4), r.random_range(k..k + 4));
        let geom = Conv2dGeometry::new(s, pad);
        let x = uniform(&mut r, (n, q, h, w), -1.0, 1.0);
        let wt = ConvWeights::from_fn(p, q, k, k, |_, _, _, _| r.random_range(-1.0..1.0));
        let bias: Option<Vec<f64>> = r.random::<bool>().then(|| (0..p).map(|_| r.random_range(-1.0..1.0)).collect());
        let y = conv2d_forward(&x, &wt, bias.as_deref(), &geom).unwrap();
        let rw = uniform(&mut r, (y.shape().n, y.shape().c, y.shape().h, y.shape().w), -1.0, 1.0);
        let g = conv2d_backward(&rw, &x, &wt, bias.is_some(), &geom).unwrap();

        let fx = central_diff(x.data(), |v| {
            weighted_sum(&conv2d_forward(&with_data(x.shape(), v), &wt, bias.as_deref(), &geom).unwrap(), &rw)
        });
        check("conv dx", g.x.data(), &fx);
        let fw = central_diff(wt.data(), |v| {
            let w2 = ConvWeights::from_vec(p, q, k, k, v.to_vec()).unwrap();
            weighted_sum(&conv2d_forward(&x, &w2, bias.as_deref(), &geom).unwrap(), &rw)
        });
        check("conv dw", g.w.data(), &fw);
        if let Some(b) = &bias {
            let fb = central_diff(b, |v| weighted_sum(&conv2d_forward(&x, &wt, Some(v), &geom).unwrap(), &rw));
            check("conv db", g.bias.as_ref().unwrap(), &fb);
        }
    }
    30
}

fn random_bn(r: &mut netscope::data::rng::StreamRng, c: usize) -> BatchNormState<f64> {
    let mut st = BatchNormState::new(c);
    for i in 0..c {
        st.gamma[i] = r.random_range(0.5..1.5);
        st.beta[i] = r.random_range(-0.5..0.5);
        st.running_mean[i] = r.random_range(-0.3..0.3);
        st.running_var[i] = r.random_range(0.5..2.0);
    }
    st
}

pub fn batchnorm_gradients() -> usize {
    for case in 0..20 {
        let mut r = rng(100 + case);
        let mode = if case % 4 == 3 { Mode::Eval } else { Mode::Train };
        let (n, c, h, w) = (r.random_range(2..4), r.random_range(1..4), r.random_range(1..4), r.random_range(1..4));
        let x = uniform(&mut r, (n, c, h, w), -2.0, 2.0);
        let st = random_bn(&mut r, c);
        let (y, cache) = batchnorm_forward(&x, &st, mode).unwrap();
        let rw = uniform(&mut r, (n, c, h, w), -1.0, 1.0);
        let g = batchnorm_backward(&rw, &cache, &st).unwrap();

        let fx = central_diff(x.data(), |v| {
            weighted_sum(&batchnorm_forward(&with_data(x.shape(), v), &st, mode).unwrap().0, &rw)
        });
        check("bn dx", g.x.data(), &fx);
        let fg = central_diff(&st.gamma, |v| {
            let s2 = BatchNormState { gamma: v.to_vec(), ..st.clone() };
            weighted_sum(&batchnorm_forward(&x, &s2, mode).unwrap().0, &rw)
        });
        check("bn dgamma", &g.gamma, &fg);
        let fb = central_diff(&st.beta, |v| {
            let s2 = BatchNormState { beta: v.to_vec(), ..st.clone() };
            weighted_sum(&batchnorm_forward(&x, &s2, mode).unwrap().0, &rw)
        });
        check("bn dbeta", &g.beta, &fb);
        assert_eq!(y.shape(), x.shape());
    }
    20
}

pub fn relu_add_and_pool_gradients() -> usize {
    for case in 0..15 {
        let mut r = rng(200 + case);
        let shape = (r.random_range(1..3), r.random_range(1..3), r.random_range(2..6), r.random_range(2..6));
        let x = away_from_zero(&mut r, shape, 1e-3);
        let rw = uniform(&mut r, shape, -1.0, 1.0);
        let y = relu_forward(&x);
        let g = relu_backward(&rw, &y).unwrap();
        let fx = central_diff(x.data(), |v| weighted_sum(&relu_forward(&with_data(x.shape(), v)), &rw));
        check("relu", g.data(), &fx);

        let b = uniform(&mut r, shape, -1.0, 1.0);
        let (ga, gb) = add_backward(&rw);
        let fa = central_diff(x.data(), |v| weighted_sum(&add_forward(&with_data(x.shape(), v), &b).unwrap(), &rw));
        let fb = central_diff(b.data(), |v| weighted_sum(&add_forward(&x, &with_data(b.shape(), v)).unwrap(), &rw));
        check("add a", ga.data(), &fa);
        check("add b", gb.data(), &fb);
    }
    for case in 0..15 {
        let mut r = rng(300 + case);
        let k = r.random_range(1..4);
        let geom = PoolGeometry::new(k, r.random_range(1..3), r.random_range(0..=k / 2));
        let shape = (r.random_range(1..3), r.random_range(1..3), r.random_range(k..k + 5), r.random_range(k..k + 5));
        let x = distinct(&mut r, shape);
        let (y, arg) = maxpool_forward(&x, &geom).unwrap();
        let ys = y.shape();
        let rw = uniform(&mut r, (ys.n, ys.c, ys.h, ys.w), -1.0, 1.0);
        let g = maxpool_backward(&rw, &arg, x.shape()).unwrap();
        let fx = central_diff(x.data(), |v| weighted_sum(&maxpool_forward(&with_data(x.shape(), v), &geom).unwrap().0, &rw));
        check("maxpool", g.data(), &fx);
    }
    30
}

pub fn linear_and_avgpool_gradients() -> usize {
    for case in 0..15 {
        let mut r = rng(400 + case);
        let (n, c, h, w) = (r.random_range(1..4), r.random_range(1..4), r.random_range(1..3), r.random_range(1..3));
        let out = r.random_range(1..5);
        let x = uniform(&mut r, (n, c, h, w), -1.0, 1.0);
        let mut lw = LinearWeights::zeros(out, c * h * w);
        lw.weight.iter_mut().for_each(|v| *v = r.random_range(-1.0..1.0));
        lw.bias.iter_mut().for_each(|v| *v = r.random_range(-1.0..1.0));
        let rw = uniform(&mut r, (n, out, 1, 1), -1.0, 1.0);
        let g = linear_backward(&rw, &x, &lw).unwrap();
        let fx = central_diff(x.data(), |v| weighted_sum(&linear_forward(&with_data(x.shape(), v), &lw).unwrap(), &rw));
        check("linear dx", g.x.data(), &fx);
        let fw = central_diff(&lw.weight, |v| {
            let l2 = LinearWeights { weight: v.to_vec(), ..lw.clone() };
            weighted_sum(&linear_forward(&x, &l2).unwrap(), &rw)
        });
        check("linear dw", &g.weight, &fw);
        let fb = central_diff(&lw.bias, |v| {
            let l2 = LinearWeights { bias: v.to_vec(), ..lw.clone() };
            weighted_sum(&linear_forward(&x, &l2).unwrap(), &rw)
        });
        check("linear db", &g.bias, &fb);

        let ra = uniform(&mut r, (n, c, 1, 1), -1.0, 1.0);
        let ga = global_avgpool_backward(&ra, x.shape()).unwrap();
        let fa = central_diff(x.data(), |v| weighted_sum(&global_avgpool_forward(&with_data(x.shape(), v)), &ra));
        check("avgpool", ga.data(), &fa);
    }
    15
}

fn three_layer_model(seed: u64) -> ModelGraph<f64> {
    let mut m = build_scaled::<f64>(Family::Resnet, &[1], 3, (3, 8, 8), 4).unwrap();
    let mut r = rng(seed);
    // move BN away from the identity so its eval path is exercised
    for layer in m.layers_mut() {
        if let LayerKind::BatchNorm(st) = &mut layer.kind {
            *st = random_bn(&mut r, st.channels());
        }
    }
    let fresh = netscope::ArchSpec::scaled(Family::Resnet, &[1], 3, (3, 8, 8), 4).with_seed(seed).build::<f64>().unwrap();
    let mut params = m.params();
    for (p, f) in params.0.iter_mut().zip(fresh.params().0) {
        if p.role == ParamRole::Weight {
            p.values = f.values;
        }
    }
    m.load_params(&params).unwrap();
    m
}

pub fn end_to_end_input_gradients() -> usize {
    let layers = ["stem.relu", "stem.maxpool", "stage1.block1.relu1", "stage1.block1.add", "stage1.block1.relu2", "head.fc"];
    for case in 0..24 {
        let model = three_layer_model(500 + case);
        let mut r = rng(600 + case);
        let layer = layers[case as usize % layers.len()];
        let selector = match case % 3 {
            0 => NeuronSelector::Center,
            1 => NeuronSelector::ChannelMean,
            _ => NeuronSelector::At(0, 0),
        };
        let channel = r.random_range(0..3);
        let obj = Objective::new(layer, channel, selector);
        let x = uniform(&mut r, (2, 3, 8, 8), -1.0, 1.0);
        let (value, g) = model.backward_to_input(&x, &obj).unwrap();
        let fx = central_diff(x.data(), |v| model.backward_to_input(&with_data(x.shape(), v), &obj).unwrap().0);
        check(&format!("{layer} {selector:?}"), g.data(), &fx);
        assert!(value.is_finite());
    }
    24
}

pub fn end_to_end_parameter_gradients() -> usize {
    for case in 0..6 {
        let model = three_layer_model(700 + case);
        let mut r = rng(800 + case);
        let x = uniform(&mut r, (3, 3, 8, 8), -1.0, 1.0);
        let trace = model.run(&x, Mode::Train, None).unwrap();
        let out = trace.final_output().clone();
        let os = out.shape();
        let rw = uniform(&mut r, (os.n, os.c, os.h, os.w), -1.0, 1.0);
        let grads = model.backward(&trace, vec![(model.output_index(), rw.clone())], true).unwrap();
        let pg = grads.params.unwrap();
        let base = model.params();
        for p in pg.iter() {
            let orig = base.get(&p.name).unwrap().values.clone();
            let numeric = central_diff(&orig, |v| {
                let mut m = model.clone();
                let mut set = base.clone();
                set.get_mut(&p.name).unwrap().values = v.to_vec();
                m.load_params(&set).unwrap();
                weighted_sum(m.run(&x, Mode::Train, None).unwrap().final_output(), &rw)
            });
            check(&p.name, &p.values, &numeric);
        }
    }
    6
}
