use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Square max-pooling window. Padded cells never win the max.
#[derive(Copy, Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PoolGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolGeometry {
    pub const fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        PoolGeometry {
            kernel,
            stride,
            padding,
        }
    }

    pub fn output_len(&self, size: usize) -> Option<usize> {
        let padded = size + 2 * self.padding;
        if self.stride == 0 || self.kernel == 0 || padded < self.kernel || self.padding >= self.kernel {
            None
        } else {
            Some((padded - self.kernel) / self.stride + 1)
        }
    }
}

/// Returns the pooled tensor and, per output element, the flat input index
/// of the winning cell (first in row-major scan on ties).
pub fn maxpool_forward<T: Scalar>(x: &Tensor<T>, geom: &PoolGeometry) -> Result<(Tensor<T>, Vec<usize>)> {
    let xs = x.shape();
    let (ho, wo) = match (geom.output_len(xs.h), geom.output_len(xs.w)) {
        (Some(h), Some(w)) => (h, w),
        _ => return Err(Error::shape("maxpool", xs, format!("{geom:?}"))),
    };
    let os = Shape::new(xs.n, xs.c, ho, wo);
    let mut out = Tensor::zeros(os);
    let mut argmax = Vec::with_capacity(os.numel());
    let data = x.data();
    let mut o = 0;
    for n in 0..xs.n {
        for c in 0..xs.c {
            let base = x.offset(n, c, 0, 0);
            for u in 0..ho {
                let y0 = (u * geom.stride) as isize - geom.padding as isize;
                for v in 0..wo {
                    let x0 = (v * geom.stride) as isize - geom.padding as isize;
                    let mut best = T::neg_infinity();
                    let mut best_idx = usize::MAX;
                    for i in 0..geom.kernel as isize {
                        let y = y0 + i;
                        if y < 0 || y >= xs.h as isize {
                            continue;
                        }
                        for j in 0..geom.kernel as isize {
                            let xx = x0 + j;
                            if xx < 0 || xx >= xs.w as isize {
                                continue;
                            }
                            let idx = base + y as usize * xs.w + xx as usize;
                            if best_idx == usize::MAX || data[idx] > best {
                                best = data[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.data_mut()[o] = best;
                    argmax.push(best_idx);
                    o += 1;
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Routes each output gradient to its recorded argmax cell.
pub fn maxpool_backward<T: Scalar>(grad_out: &Tensor<T>, argmax: &[usize], input_shape: Shape) -> Result<Tensor<T>> {
    if grad_out.data().len() != argmax.len() {
        return Err(Error::shape(
            "maxpool_backward",
            grad_out.shape(),
            format!("{} recorded windows", argmax.len()),
        ));
    }
    let mut dx = Tensor::zeros(input_shape);
    let buf = dx.data_mut();
    for (&g, &idx) in grad_out.data().iter().zip(argmax) {
        buf[idx] += g;
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_gradient_returns_to_hot_cell() {
        let mut x = Tensor::<f32>::zeros((1, 1, 7, 7));
        *x.at_mut(0, 0, 3, 4) = 1.0;
        let geom = PoolGeometry::new(3, 2, 0);
        let (y, idx) = maxpool_forward(&x, &geom).unwrap();
        let g = maxpool_backward(&Tensor::full(y.shape(), 1.0), &idx, x.shape()).unwrap();
        // (3,4) wins the windows at output rows {1} x cols {1, 2}; the other
        // all-zero windows route to their first cell.
        assert_eq!(g.at(0, 0, 3, 4), 2.0);
        assert_eq!(g.data().iter().sum::<f32>(), 9.0);
        assert_eq!(g.at(0, 0, 0, 0), 1.0);
    }

    #[test]
    fn padding_never_wins_on_negative_input() {
        let x = Tensor::<f32>::full((1, 1, 4, 4), -2.0);
        let (y, _) = maxpool_forward(&x, &PoolGeometry::new(3, 2, 1)).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
        assert!(y.data().iter().all(|&v| v == -2.0));
    }

    #[test]
    fn ties_pick_first_in_scan_order() {
        let x = Tensor::<f32>::full((1, 1, 2, 2), 1.0);
        let (_, idx) = maxpool_forward(&x, &PoolGeometry::new(2, 2, 0)).unwrap();
        assert_eq!(idx, vec![0]);
    }

    #[test]
    fn output_covers_inputs() {
        let x = Tensor::<f32>::from_fn((1, 2, 6, 6), |_, c, h, w| ((c * 36 + h * 6 + w) as f32 * 1.7).sin());
        let geom = PoolGeometry::new(3, 2, 1);
        let (y, _) = maxpool_forward(&x, &geom).unwrap();
        for c in 0..2 {
            for u in 0..3 {
                for v in 0..3 {
                    for i in 0..3 {
                        for j in 0..3 {
                            let (yy, xx) = ((u * 2 + i) as isize - 1, (v * 2 + j) as isize - 1);
                            if (0..6).contains(&yy) && (0..6).contains(&xx) {
                                assert!(y.at(0, c, u, v) >= x.at(0, c, yy as usize, xx as usize));
                            }
                        }
                    }
                }
            }
        }
    }
}
