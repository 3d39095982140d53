#![allow(dead_code)]

use netscope::data::rng::{self, StreamRng};
use netscope::Tensor;
use rand::Rng;

pub fn rng(case: u64) -> StreamRng {
    rng::stream(0x5eed, case)
}

pub fn uniform(r: &mut StreamRng, shape: (usize, usize, usize, usize), lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| r.random_range(lo..hi))
}

/// Uniform values kept at least `gap` away from zero.
pub fn away_from_zero(r: &mut StreamRng, shape: (usize, usize, usize, usize), gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| {
        let m = r.random_range(gap..1.0);
        if r.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// Pairwise distinct values on a grid of spacing 1e-2, shuffled.
pub fn distinct(r: &mut StreamRng, shape: (usize, usize, usize, usize)) -> Tensor<f64> {
    use rand::seq::SliceRandom;
    let n = shape.0 * shape.1 * shape.2 * shape.3;
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 1e-2 - n as f64 * 5e-3).collect();
    v.shuffle(r);
    Tensor::from_vec(shape, v).unwrap()
}

pub mod fixtures;
pub mod grad;
pub mod oracle;
pub mod residual;

pub const H: f64 = 1e-5;

/// Central differences of `f` with respect to every entry of `v`.
pub fn central_diff(v: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = v.to_vec();
    (0..v.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + H;
            let up = f(&x);
            x[i] = orig - H;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`; zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn weighted_sum(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}
