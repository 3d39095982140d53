use rayon::prelude::*;

use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Convolution kernel bank `W[p][q][i][j]`: `p` output channel, `q` input
/// channel, `(i, j)` spatial tap.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeights<T = f32> {
    out_channels: usize,
    in_channels: usize,
    kh: usize,
    kw: usize,
    data: Vec<T>,
}

impl<T: Scalar> ConvWeights<T> {
    pub fn zeros(out_channels: usize, in_channels: usize, kh: usize, kw: usize) -> Self {
        ConvWeights {
            out_channels,
            in_channels,
            kh,
            kw,
            data: vec![T::zero(); out_channels * in_channels * kh * kw],
        }
    }

    pub fn from_vec(
        out_channels: usize,
        in_channels: usize,
        kh: usize,
        kw: usize,
        data: Vec<T>,
    ) -> Result<Self> {
        if kh == 0 || kw == 0 || out_channels == 0 || in_channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv weights need positive dims, got {out_channels}x{in_channels}x{kh}x{kw}"
            )));
        }
        if data.len() != out_channels * in_channels * kh * kw {
            return Err(Error::shape(
                "ConvWeights::from_vec",
                format!("({out_channels}, {in_channels}, {kh}, {kw})"),
                format!("{} elements", data.len()),
            ));
        }
        Ok(ConvWeights {
            out_channels,
            in_channels,
            kh,
            kw,
            data,
        })
    }

    pub fn from_fn(
        out_channels: usize,
        in_channels: usize,
        kh: usize,
        kw: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> T,
    ) -> Self {
        let mut w = Self::zeros(out_channels, in_channels, kh, kw);
        for p in 0..out_channels {
            for q in 0..in_channels {
                for i in 0..kh {
                    for j in 0..kw {
                        *w.at_mut(p, q, i, j) = f(p, q, i, j);
                    }
                }
            }
        }
        w
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.kh, self.kw)
    }

    /// Elements per output filter (`q · kh · kw`).
    pub fn filter_len(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kh, self.kw]
    }

    #[inline]
    pub fn at(&self, p: usize, q: usize, i: usize, j: usize) -> T {
        self.data[((p * self.in_channels + q) * self.kh + i) * self.kw + j]
    }

    #[inline]
    pub fn at_mut(&mut self, p: usize, q: usize, i: usize, j: usize) -> &mut T {
        &mut self.data[((p * self.in_channels + q) * self.kh + i) * self.kw + j]
    }

    /// Filter `p` as a flat `(q, kh, kw)` slice.
    pub fn filter(&self, p: usize) -> &[T] {
        let len = self.filter_len();
        &self.data[p * len..(p + 1) * len]
    }

    pub fn filter_mut(&mut self, p: usize) -> &mut [T] {
        let len = self.filter_len();
        &mut self.data[p * len..(p + 1) * len]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn cast<U: Scalar>(&self) -> ConvWeights<U> {
        ConvWeights {
            out_channels: self.out_channels,
            in_channels: self.in_channels,
            kh: self.kh,
            kw: self.kw,
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    /// Filter `p` as a `(1, q, kh, kw)` tensor.
    pub fn filter_tensor(&self, p: usize) -> Tensor<T> {
        Tensor::from_vec((1, self.in_channels, self.kh, self.kw), self.filter(p).to_vec())
            .expect("filter length matches dims")
    }
}

/// Stride and symmetric zero padding of a convolution, as (rows, cols).
#[derive(Copy, Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Conv2dGeometry {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2dGeometry {
    pub const fn new(stride: usize, padding: usize) -> Self {
        Conv2dGeometry {
            stride: (stride, stride),
            padding: (padding, padding),
        }
    }

    pub fn output_hw(&self, h: usize, w: usize, kh: usize, kw: usize) -> Option<(usize, usize)> {
        let out = |size: usize, k: usize, s: usize, p: usize| {
            let padded = size + 2 * p;
            if s == 0 || padded < k {
                None
            } else {
                Some((padded - k) / s + 1)
            }
        };
        Some((
            out(h, kh, self.stride.0, self.padding.0)?,
            out(w, kw, self.stride.1, self.padding.1)?,
        ))
    }
}

/// Gradients of a convolution.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub x: Tensor<T>,
    pub w: ConvWeights<T>,
    pub bias: Option<Vec<T>>,
}

fn output_shape<T: Scalar>(
    x: Shape,
    w: &ConvWeights<T>,
    bias: Option<&[T]>,
    geom: &Conv2dGeometry,
) -> Result<Shape> {
    if x.c != w.in_channels {
        return Err(Error::shape(
            "conv2d",
            format!("input {x}"),
            format!("weights {:?}", w.dims()),
        ));
    }
    if let Some(b) = bias {
        if b.len() != w.out_channels {
            return Err(Error::shape(
                "conv2d bias",
                format!("{} output channels", w.out_channels),
                format!("{} bias entries", b.len()),
            ));
        }
    }
    let (ho, wo) = geom
        .output_hw(x.h, x.w, w.kh, w.kw)
        .ok_or_else(|| Error::shape("conv2d", format!("input {x}"), format!("weights {:?} {geom:?}", w.dims())))?;
    Ok(Shape::new(x.n, w.out_channels, ho, wo))
}

fn is_pointwise<T: Scalar>(w: &ConvWeights<T>, geom: &Conv2dGeometry) -> bool {
    w.kh == 1 && w.kw == 1 && geom.stride == (1, 1) && geom.padding == (0, 0)
}

/// Unfolds one image `(c, h, w)` into a `(c·kh·kw) × (ho·wo)` patch matrix.
fn im2col<T: Scalar>(
    img: &[T],
    xs: Shape,
    kh: usize,
    kw: usize,
    geom: &Conv2dGeometry,
    ho: usize,
    wo: usize,
    col: &mut [T],
) {
    let (sh, sw) = geom.stride;
    let (ph, pw) = geom.padding;
    let cols = ho * wo;
    for q in 0..xs.c {
        let plane = &img[q * xs.h * xs.w..(q + 1) * xs.h * xs.w];
        for i in 0..kh {
            for j in 0..kw {
                let row = &mut col[((q * kh + i) * kw + j) * cols..][..cols];
                for u in 0..ho {
                    let y = (u * sh + i) as isize - ph as isize;
                    let dst = &mut row[u * wo..(u + 1) * wo];
                    if y < 0 || y >= xs.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[y as usize * xs.w..(y as usize + 1) * xs.w];
                    for (v, d) in dst.iter_mut().enumerate() {
                        let x = (v * sw + j) as isize - pw as isize;
                        *d = if x < 0 || x >= xs.w as isize {
                            T::zero()
                        } else {
                            src[x as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds a patch matrix back into an image.
fn col2im<T: Scalar>(
    col: &[T],
    xs: Shape,
    kh: usize,
    kw: usize,
    geom: &Conv2dGeometry,
    ho: usize,
    wo: usize,
    img: &mut [T],
) {
    let (sh, sw) = geom.stride;
    let (ph, pw) = geom.padding;
    let cols = ho * wo;
    for q in 0..xs.c {
        let plane = &mut img[q * xs.h * xs.w..(q + 1) * xs.h * xs.w];
        for i in 0..kh {
            for j in 0..kw {
                let row = &col[((q * kh + i) * kw + j) * cols..][..cols];
                for u in 0..ho {
                    let y = (u * sh + i) as isize - ph as isize;
                    if y < 0 || y >= xs.h as isize {
                        continue;
                    }
                    let dst = &mut plane[y as usize * xs.w..(y as usize + 1) * xs.w];
                    for v in 0..wo {
                        let x = (v * sw + j) as isize - pw as isize;
                        if x >= 0 && (x as usize) < xs.w {
                            dst[x as usize] += row[u * wo + v];
                        }
                    }
                }
            }
        }
    }
}

/// `out[p, v] = Σ_k w[p, k] · col[k, v]`, accumulated in ascending `k` for
/// every output element so the result is independent of blocking.
fn gemm_accumulate<T: Scalar>(w: &ConvWeights<T>, col: &[T], cols: usize, out: &mut [T]) {
    let klen = w.filter_len();
    for p in 0..w.out_channels {
        let row = &mut out[p * cols..(p + 1) * cols];
        row.fill(T::zero());
        let filter = w.filter(p);
        for (k, &wv) in filter.iter().enumerate().take(klen) {
            let src = &col[k * cols..(k + 1) * cols];
            for (o, &c) in row.iter_mut().zip(src) {
                *o += wv * c;
            }
        }
    }
}

/// 2-D cross-correlation with zero padding.
///
/// Lowered to a patch-matrix product per image. Each output element is summed
/// over `(q, i, j)` in row-major order starting from zero, then the bias is
/// added, which makes the result bit-identical to the direct nested loop.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &ConvWeights<T>,
    bias: Option<&[T]>,
    geom: &Conv2dGeometry,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let os = output_shape(xs, w, bias, geom)?;
    let cols = os.h * os.w;
    let mut out = Tensor::zeros(os);
    if os.numel() == 0 {
        return Ok(out);
    }
    let pointwise = is_pointwise(w, geom);
    out.data_mut()
        .par_chunks_mut(os.item_len())
        .enumerate()
        .for_each_init(
            || Vec::<T>::new(),
            |col, (n, dst)| {
                let img = x.item(n);
                let col: &[T] = if pointwise {
                    img
                } else {
                    col.resize(w.filter_len() * cols, T::zero());
                    im2col(img, xs, w.kh, w.kw, geom, os.h, os.w, col);
                    col
                };
                gemm_accumulate(w, col, cols, dst);
                if let Some(b) = bias {
                    for (p, &bv) in b.iter().enumerate() {
                        for o in &mut dst[p * cols..(p + 1) * cols] {
                            *o += bv;
                        }
                    }
                }
            },
        );
    Ok(out)
}

struct ItemGrads<T> {
    x: Vec<T>,
    w: Vec<T>,
    b: Vec<T>,
}

fn backward_item<T: Scalar>(
    g: &[T],
    img: &[T],
    xs: Shape,
    w: &ConvWeights<T>,
    geom: &Conv2dGeometry,
    ho: usize,
    wo: usize,
    want_params: bool,
) -> ItemGrads<T> {
    let cols = ho * wo;
    let klen = w.filter_len();
    let pointwise = is_pointwise(w, geom);

    // d col[k, v] = Σ_p w[p, k] · g[p, v]
    let mut dcol = vec![T::zero(); klen * cols];
    for p in 0..w.out_channels {
        let grow = &g[p * cols..(p + 1) * cols];
        for (k, &wv) in w.filter(p).iter().enumerate() {
            if wv == T::zero() {
                continue;
            }
            let dst = &mut dcol[k * cols..(k + 1) * cols];
            for (d, &gv) in dst.iter_mut().zip(grow) {
                *d += wv * gv;
            }
        }
    }
    let dx = if pointwise {
        dcol
    } else {
        let mut dx = vec![T::zero(); xs.item_len()];
        col2im(&dcol, xs, w.kh, w.kw, geom, ho, wo, &mut dx);
        dx
    };

    if !want_params {
        return ItemGrads {
            x: dx,
            w: Vec::new(),
            b: Vec::new(),
        };
    }

    let col_buf;
    let col: &[T] = if pointwise {
        img
    } else {
        let mut c = vec![T::zero(); klen * cols];
        im2col(img, xs, w.kh, w.kw, geom, ho, wo, &mut c);
        col_buf = c;
        &col_buf
    };
    let mut dw = vec![T::zero(); w.out_channels * klen];
    let mut db = vec![T::zero(); w.out_channels];
    for p in 0..w.out_channels {
        let grow = &g[p * cols..(p + 1) * cols];
        db[p] = grow.iter().copied().sum();
        for k in 0..klen {
            let src = &col[k * cols..(k + 1) * cols];
            dw[p * klen + k] = grow.iter().zip(src).map(|(&a, &b)| a * b).sum();
        }
    }
    ItemGrads { x: dx, w: dw, b: db }
}

fn backward_impl<T: Scalar>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    w: &ConvWeights<T>,
    has_bias: bool,
    geom: &Conv2dGeometry,
    want_params: bool,
) -> Result<ConvGrads<T>> {
    let xs = x.shape();
    let os = output_shape(xs, w, None, geom)?;
    if grad_out.shape() != os {
        return Err(Error::shape("conv2d_backward", grad_out.shape(), os));
    }
    let items: Vec<ItemGrads<T>> = (0..xs.n)
        .into_par_iter()
        .map(|n| backward_item(grad_out.item(n), x.item(n), xs, w, geom, os.h, os.w, want_params))
        .collect();

    let mut dx = Vec::with_capacity(xs.numel());
    let mut dw = ConvWeights::zeros(w.out_channels, w.in_channels, w.kh, w.kw);
    let mut db = vec![T::zero(); w.out_channels];
    // Reduce in batch order so the sum does not depend on the thread count.
    for item in items {
        dx.extend_from_slice(&item.x);
        if want_params {
            for (a, b) in dw.data.iter_mut().zip(&item.w) {
                *a += *b;
            }
            for (a, b) in db.iter_mut().zip(&item.b) {
                *a += *b;
            }
        }
    }
    Ok(ConvGrads {
        x: Tensor::from_vec(xs, dx)?,
        w: dw,
        bias: has_bias.then_some(db),
    })
}

/// Adjoint of [`conv2d_forward`] with respect to input, weights and bias.
pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    w: &ConvWeights<T>,
    has_bias: bool,
    geom: &Conv2dGeometry,
) -> Result<ConvGrads<T>> {
    backward_impl(grad_out, x, w, has_bias, geom, true)
}

/// Input gradient only; weight and bias gradients are left zero.
pub(crate) fn conv2d_backward_input<T: Scalar>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    w: &ConvWeights<T>,
    geom: &Conv2dGeometry,
) -> Result<Tensor<T>> {
    Ok(backward_impl(grad_out, x, w, false, geom, false)?.x)
}
