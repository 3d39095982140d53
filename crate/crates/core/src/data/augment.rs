use rand::Rng;

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// Fraction of the image area kept by a random crop.
pub const AREA_RANGE: (f64, f64) = (0.08, 1.0);
/// Width / height ratio of a random crop.
pub const ASPECT_RANGE: (f64, f64) = (3.0 / 4.0, 4.0 / 3.0);
pub const CROP_ATTEMPTS: usize = 10;

/// Crop rectangle in pixels: rows `top..top+height`, cols `left..left+width`.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct CropBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Draws a crop box for an `h × w` image.
///
/// Area fraction is uniform on [`AREA_RANGE`], aspect ratio is log-uniform
/// on [`ASPECT_RANGE`]. After [`CROP_ATTEMPTS`] misses the whole image is
/// centre-cropped to the nearest admissible aspect ratio.
pub fn sample_crop(h: usize, w: usize, rng: &mut impl Rng) -> CropBox {
    let area = (h * w) as f64;
    let (lo, hi) = (ASPECT_RANGE.0.ln(), ASPECT_RANGE.1.ln());
    for _ in 0..CROP_ATTEMPTS {
        let target = area * rng.random_range(AREA_RANGE.0..=AREA_RANGE.1);
        let ratio = rng.random_range(lo..=hi).exp();
        let cw = (target * ratio).sqrt().round() as usize;
        let ch = (target / ratio).sqrt().round() as usize;
        if cw > 0 && ch > 0 && cw <= w && ch <= h {
            let top = rng.random_range(0..=h - ch);
            let left = rng.random_range(0..=w - cw);
            return CropBox {
                top,
                left,
                height: ch,
                width: cw,
            };
        }
    }
    let ratio = w as f64 / h as f64;
    let (ch, cw) = if ratio < ASPECT_RANGE.0 {
        (((w as f64) / ASPECT_RANGE.0).round() as usize, w)
    } else if ratio > ASPECT_RANGE.1 {
        (h, ((h as f64) * ASPECT_RANGE.1).round() as usize)
    } else {
        (h, w)
    };
    let (ch, cw) = (ch.clamp(1, h), cw.clamp(1, w));
    CropBox {
        top: (h - ch) / 2,
        left: (w - cw) / 2,
        height: ch,
        width: cw,
    }
}

/// Bilinear resampling with half-pixel centres: output pixel `y` samples the
/// source at `(y + 0.5) · in/out − 0.5`, clamped to the valid range.
pub fn bilinear_resize<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let s = x.shape();
    if s.h == out_h && s.w == out_w {
        return x.clone();
    }
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, T)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, T::from_f64_lossy(src - i0 as f64))
            })
            .collect()
    };
    let ys = taps(out_h, s.h);
    let xs = taps(out_w, s.w);
    Tensor::from_fn((s.n, s.c, out_h, out_w), |n, c, y, xx| {
        let (y0, y1, fy) = ys[y];
        let (x0, x1, fx) = xs[xx];
        let lerp = |a: T, b: T, f: T| a + f * (b - a);
        let top = lerp(x.at(n, c, y0, x0), x.at(n, c, y0, x1), fx);
        let bot = lerp(x.at(n, c, y1, x0), x.at(n, c, y1, x1), fx);
        lerp(top, bot, fy)
    })
}

/// Crops `x` to `b` and resizes to `out`.
pub fn resized_crop<T: Scalar>(x: &Tensor<T>, b: CropBox, out: (usize, usize)) -> Tensor<T> {
    let s = x.shape();
    let crop = Tensor::from_fn((s.n, s.c, b.height, b.width), |n, c, y, xx| x.at(n, c, b.top + y, b.left + xx));
    bilinear_resize(&crop, out.0, out.1)
}

pub fn random_resized_crop<T: Scalar>(x: &Tensor<T>, out: (usize, usize), rng: &mut impl Rng) -> Tensor<T> {
    let s = x.shape();
    let b = sample_crop(s.h, s.w, rng);
    resized_crop(x, b, out)
}

/// Mirrors columns with probability `prob`.
pub fn horizontal_flip<T: Scalar>(x: &Tensor<T>, rng: &mut impl Rng, prob: f64) -> Tensor<T> {
    if rng.random::<f64>() < prob {
        let w = x.shape().w;
        Tensor::from_fn(x.shape(), |n, c, y, xx| x.at(n, c, y, w - 1 - xx))
    } else {
        x.clone()
    }
}

/// Evaluation transform: identity when the size already matches, otherwise
/// resize the shorter side to `out · 256/224` and take the centre crop.
pub fn eval_transform<T: Scalar>(x: &Tensor<T>, out: (usize, usize)) -> Result<Tensor<T>> {
    let s = x.shape();
    if (s.h, s.w) == out {
        return Ok(x.clone());
    }
    let target = ((out.0.max(out.1) as f64) * 256.0 / 224.0).round() as usize;
    let (rh, rw) = if s.h <= s.w {
        (target, ((s.w as f64) * target as f64 / s.h as f64).round() as usize)
    } else {
        (((s.h as f64) * target as f64 / s.w as f64).round() as usize, target)
    };
    let resized = bilinear_resize(x, rh.max(out.0), rw.max(out.1));
    let rs = resized.shape();
    let b = CropBox {
        top: (rs.h - out.0) / 2,
        left: (rs.w - out.1) / 2,
        height: out.0,
        width: out.1,
    };
    Ok(resized_crop(&resized, b, out))
}
