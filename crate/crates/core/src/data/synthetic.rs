//! Procedural labelled images: oriented colour gratings.
//!
//! Class `k` of `K` is a sinusoidal grating at angle `kπ/K` tinted with a
//! class colour; frequency, phase, contrast and pixel noise vary per image.
//! Pixels are quantised to bytes so PPM export is lossless.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{rng, Dataset, Sample, Split};
use crate::tensor::Tensor;

const TINTS: [[f32; 3]; 6] = [
    [1.0, 0.2, 0.2],
    [0.2, 1.0, 0.2],
    [0.2, 0.2, 1.0],
    [1.0, 1.0, 0.2],
    [0.2, 1.0, 1.0],
    [1.0, 0.2, 1.0],
];

pub fn gratings(count: usize, side: usize, num_classes: usize, seed: u64) -> Dataset {
    let noise = Normal::new(0.0f32, 0.04).expect("valid std");
    let samples = (0..count)
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let label = i % num_classes;
            let theta = std::f32::consts::PI * label as f32 / num_classes as f32;
            let freq = r.random_range(0.6f32..1.2);
            let phase = r.random_range(0.0f32..std::f32::consts::TAU);
            let contrast = r.random_range(0.25f32..0.45);
            let tint = TINTS[label % TINTS.len()];
            let (ct, st) = (theta.cos(), theta.sin());
            let mut image = Tensor::zeros((1, 3, side, side));
            for y in 0..side {
                for x in 0..side {
                    let wave = (freq * (x as f32 * ct + y as f32 * st) + phase).sin();
                    for c in 0..3 {
                        let v = 0.5 + contrast * wave * tint[c] + noise.sample(&mut r);
                        let byte = (v.clamp(0.0, 1.0) * 255.0).round();
                        *image.at_mut(0, c, y, x) = byte / 255.0;
                    }
                }
            }
            Sample {
                id: format!("img{i:05}"),
                image,
                label,
            }
        })
        .collect();
    Dataset::new(samples, num_classes, Split::Train).expect("generated ids are unique")
}
