//! Optimised paths against direct reference loops.
//! Each public check returns the number of randomized cases it ran.

use super::*;
use netscope::mine::{mean_preferred, topk, StimulusRecord};
use netscope::rf::Rect;
use netscope::tensor::{conv2d_forward, Conv2dGeometry, ConvWeights, Scalar};
use netscope::vfilter::virtual_filter;
use netscope::Tensor;
use rand::Rng;

/// Direct convolution: every output starts at zero, accumulates
/// `w · x` over (q, i, j) in ascending order with padded taps reading zero,
/// then adds the bias.
fn naive_conv<T: Scalar>(x: &Tensor<T>, w: &ConvWeights<T>, bias: Option<&[T]>, g: &Conv2dGeometry) -> Tensor<T> {
    let s = x.shape();
    let [p_out, q_in, kh, kw] = w.dims();
    let oh = (s.h + 2 * g.padding.0 - kh) / g.stride.0 + 1;
    let ow = (s.w + 2 * g.padding.1 - kw) / g.stride.1 + 1;
    let mut y = Tensor::zeros((s.n, p_out, oh, ow));
    for n in 0..s.n {
        for p in 0..p_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::zero();
                    for q in 0..q_in {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (oy * g.stride.0 + i) as isize - g.padding.0 as isize;
                                let ix = (ox * g.stride.1 + j) as isize - g.padding.1 as isize;
                                let inside = iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w;
                                let v = if inside { x.at(n, q, iy as usize, ix as usize) } else { T::zero() };
                                acc += w.at(p, q, i, j) * v;
                            }
                        }
                    }
                    if let Some(b) = bias {
                        acc += b[p];
                    }
                    *y.at_mut(n, p, oy, ox) = acc;
                }
            }
        }
    }
    y
}

fn bits<T: Scalar>(t: &Tensor<T>) -> Vec<u64> {
    t.data().iter().map(|v| v.to_f64_lossy().to_bits()).collect()
}

pub fn conv_matches_naive_loop_bit_exactly() -> usize {
    for case in 0..120u64 {
        let mut r = rng(1000 + case);
        let k = [1, 2, 3, 5, 7][r.random_range(0..5)];
        let (n, q, p) = (r.random_range(1..4), r.random_range(1..6), r.random_range(1..6));
        let s = r.random_range(1..4);
        let pad = r.random_range(0..=k / 2);
        let (h, w) = (r.random_range(k..k + 9), r.random_range(k..k + 9));
        let geom = Conv2dGeometry::new(s, pad);
        let x: Tensor<f32> = Tensor::from_fn((n, q, h, w), |_, _, _, _| r.random_range(-1.0..1.0));
        let wt = ConvWeights::from_fn(p, q, k, k, |_, _, _, _| r.random_range(-1.0f32..1.0));
        let bias: Option<Vec<f32>> = r.random::<bool>().then(|| (0..p).map(|_| r.random_range(-1.0..1.0)).collect());
        let fast = conv2d_forward(&x, &wt, bias.as_deref(), &geom).unwrap();
        let slow = naive_conv(&x, &wt, bias.as_deref(), &geom);
        assert_eq!(fast.shape(), slow.shape(), "case {case}");
        assert_eq!(bits(&fast), bits(&slow), "case {case}: k{k} s{s} p{pad}");
        if case % 4 == 0 {
            let (x64, w64) = (x.cast::<f64>(), wt.cast::<f64>());
            let b64: Option<Vec<f64>> = bias.as_ref().map(|b| b.iter().map(|&v| v as f64).collect());
            let fast = conv2d_forward(&x64, &w64, b64.as_deref(), &geom).unwrap();
            assert_eq!(bits(&fast), bits(&naive_conv(&x64, &w64, b64.as_deref(), &geom)));
        }
    }
    120
}

/// Triple loop over (q, i, j) with an inner sum over k in ascending order.
fn naive_virtual(w1: &ConvWeights<f32>, w2: &ConvWeights<f32>, p: usize) -> (Vec<f32>, Vec<(usize, f32, (usize, usize))>) {
    let [c1, q_in, kh, kw] = w1.dims();
    let [_, _, h2, w2k] = w2.dims();
    let tap = |k: usize| {
        let mut best = (0, 0);
        let mut best_abs = -1.0f32;
        for i in 0..h2 {
            for j in 0..w2k {
                let a = w2.at(p, k, i, j).abs();
                if a > best_abs {
                    best_abs = a;
                    best = (i, j);
                }
            }
        }
        best
    };
    let mut out = Vec::with_capacity(q_in * kh * kw);
    for q in 0..q_in {
        for i in 0..kh {
            for j in 0..kw {
                let mut acc = 0.0f32;
                for k in 0..c1 {
                    let (ti, tj) = tap(k);
                    acc += w2.at(p, k, ti, tj) * w1.at(k, q, i, j);
                }
                out.push(acc);
            }
        }
    }
    let mut couplings: Vec<(usize, f32, (usize, usize))> = (0..c1)
        .map(|k| {
            let (ti, tj) = tap(k);
            (k, w2.at(p, k, ti, tj), (ti, tj))
        })
        .collect();
    couplings.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    (out, couplings)
}

pub fn virtual_filter_matches_triple_loop() -> usize {
    for case in 0..120u64 {
        let mut r = rng(2000 + case);
        let c1 = r.random_range(1..10);
        let q = r.random_range(1..4);
        let k1 = [1, 3, 5, 7][r.random_range(0..4)];
        let k2 = [1, 3][r.random_range(0..2)];
        let p_out = r.random_range(1..5);
        // coarse values make ties in |W2| common
        let w1 = ConvWeights::from_fn(c1, q, k1, k1, |_, _, _, _| r.random_range(-1.0f32..1.0));
        let w2 = ConvWeights::from_fn(p_out, c1, k2, k2, |_, _, _, _| r.random_range(-4i32..=4) as f32 * 0.25);
        let p = r.random_range(0..p_out);
        let vf = virtual_filter(&w1, &w2, p).unwrap();
        let (filter, couplings) = naive_virtual(&w1, &w2, p);
        let got: Vec<u32> = vf.filter.data().iter().map(|v| v.to_bits()).collect();
        let want: Vec<u32> = filter.iter().map(|v| v.to_bits()).collect();
        assert_eq!(got, want, "case {case}");
        let got_c: Vec<(usize, f32, (usize, usize))> = vf.couplings.iter().map(|c| (c.k, c.coefficient, c.pos)).collect();
        assert_eq!(got_c, couplings, "case {case}");
    }
    // the documented shapes
    let mut r = rng(2999);
    let w1 = ConvWeights::from_fn(8, 3, 7, 7, |_, _, _, _| r.random_range(-1.0f32..1.0));
    let w2 = ConvWeights::from_fn(4, 8, 3, 3, |_, _, _, _| r.random_range(-1.0f32..1.0));
    let vf = virtual_filter(&w1, &w2, 2).unwrap();
    assert_eq!(vf.filter.data(), &naive_virtual(&w1, &w2, 2).0[..]);
    121
}

fn random_records(r: &mut netscope::data::rng::StreamRng, n: usize, images: usize) -> Vec<StimulusRecord> {
    (0..n)
        .map(|i| {
            let side = 3;
            let top = r.random_range(0..4);
            let left = r.random_range(0..4);
            let rect = Rect {
                top,
                left,
                bottom: top + side - 1,
                right: left + side - 1,
            };
            StimulusRecord {
                image_id: format!("im{:03}", i % images),
                layer: "l".into(),
                channel: 0,
                neuron: (0, 0),
                activation: r.random_range(-3i32..=3) as f32 * 0.5,
                rect,
                full: rect,
                clipped: false,
            }
        })
        .collect()
}

pub fn mean_preferred_matches_brute_force() -> usize {
    for case in 0..120u64 {
        let mut r = rng(3000 + case);
        let images: Vec<Tensor<f32>> = (0..6)
            .map(|_| Tensor::from_fn((1, 3, 6, 6), |_, _, _, _| r.random_range(0.0f32..1.0)))
            .collect();
        let n = r.random_range(1..6);
        let recs = random_records(&mut r, n, 6);
        let image_of = |id: &str| Ok(images[id[2..].parse::<usize>().unwrap()].clone());
        let got = mean_preferred(&recs, image_of).unwrap();

        let mut sum = vec![0.0f64; 27];
        let mut count = 0;
        for rec in &recs {
            if rec.activation <= 0.0 {
                continue;
            }
            count += 1;
            let img = &images[rec.image_id[2..].parse::<usize>().unwrap()];
            let mut t = 0;
            for c in 0..3 {
                for y in rec.rect.top..=rec.rect.bottom {
                    for x in rec.rect.left..=rec.rect.right {
                        sum[t] += img.at(0, c, y as usize, x as usize) as f64;
                        t += 1;
                    }
                }
            }
        }
        assert_eq!(got.support, count);
        if count == 0 {
            assert!(got.inactive_on_dataset && got.mean.is_none());
            continue;
        }
        let mean = got.mean.unwrap();
        for (a, s) in mean.data().iter().zip(&sum) {
            assert!((*a as f64 - s / count as f64).abs() < 1e-6, "case {case}");
        }
    }
    120
}

pub fn topk_matches_selection_oracle() -> usize {
    for case in 0..150u64 {
        let mut r = rng(4000 + case);
        let n = r.random_range(0..40);
        let mut recs = random_records(&mut r, n, 1000);
        for (i, rec) in recs.iter_mut().enumerate() {
            rec.image_id = format!("id{:02}", (i * 7919) % 97);
        }
        let k = r.random_range(1..20);
        let got: Vec<(String, f32)> = topk(&recs, k).into_iter().map(|x| (x.image_id, x.activation)).collect();

        let mut pool: Vec<(String, f32)> = recs.iter().map(|x| (x.image_id.clone(), x.activation)).collect();
        let mut want = Vec::new();
        while want.len() < k && !pool.is_empty() {
            let mut best = 0;
            for i in 1..pool.len() {
                let (a, b) = (&pool[i], &pool[best]);
                if a.1 > b.1 || (a.1 == b.1 && a.0 < b.0) {
                    best = i;
                }
            }
            want.push(pool.remove(best));
        }
        assert_eq!(got, want, "case {case}");
    }
    150
}
