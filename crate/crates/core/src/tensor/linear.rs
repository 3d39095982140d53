use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Fully connected layer; inputs are flattened per batch item.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearWeights<T = f32> {
    pub out_features: usize,
    pub in_features: usize,
    /// Row-major `(out, in)`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct LinearGrads<T> {
    pub x: Tensor<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LinearWeights<T> {
    pub fn zeros(out_features: usize, in_features: usize) -> Self {
        LinearWeights {
            out_features,
            in_features,
            weight: vec![T::zero(); out_features * in_features],
            bias: vec![T::zero(); out_features],
        }
    }

    pub fn cast<U: Scalar>(&self) -> LinearWeights<U> {
        let c = |v: &Vec<T>| v.iter().map(|&x| U::from_f64_lossy(x.to_f64_lossy())).collect();
        LinearWeights {
            out_features: self.out_features,
            in_features: self.in_features,
            weight: c(&self.weight),
            bias: c(&self.bias),
        }
    }
}

/// `(N, C, H, W)` → `(N, out, 1, 1)`.
pub fn linear_forward<T: Scalar>(x: &Tensor<T>, lw: &LinearWeights<T>) -> Result<Tensor<T>> {
    let xs = x.shape();
    if xs.item_len() != lw.in_features {
        return Err(Error::shape(
            "linear",
            xs,
            format!("({} -> {})", lw.in_features, lw.out_features),
        ));
    }
    let mut out = Tensor::zeros((xs.n, lw.out_features, 1, 1));
    for n in 0..xs.n {
        let item = x.item(n);
        for o in 0..lw.out_features {
            let row = &lw.weight[o * lw.in_features..(o + 1) * lw.in_features];
            let acc: T = row.iter().zip(item).map(|(&a, &b)| a * b).sum();
            out.data_mut()[n * lw.out_features + o] = acc + lw.bias[o];
        }
    }
    Ok(out)
}

pub fn linear_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    lw: &LinearWeights<T>,
) -> Result<LinearGrads<T>> {
    let xs = x.shape();
    let expect = Shape::new(xs.n, lw.out_features, 1, 1);
    if grad_out.shape() != expect {
        return Err(Error::shape("linear_backward", grad_out.shape(), expect));
    }
    let mut dx = Tensor::zeros(xs);
    let mut dw = vec![T::zero(); lw.weight.len()];
    let mut db = vec![T::zero(); lw.out_features];
    for n in 0..xs.n {
        let item = x.item(n);
        let g = grad_out.item(n);
        let dxi = dx.item_mut(n);
        for o in 0..lw.out_features {
            let go = g[o];
            db[o] += go;
            let row = &lw.weight[o * lw.in_features..(o + 1) * lw.in_features];
            let drow = &mut dw[o * lw.in_features..(o + 1) * lw.in_features];
            for k in 0..lw.in_features {
                dxi[k] += row[k] * go;
                drow[k] += item[k] * go;
            }
        }
    }
    Ok(LinearGrads {
        x: dx,
        weight: dw,
        bias: db,
    })
}

/// Spatial mean per channel: `(N, C, H, W)` → `(N, C, 1, 1)`.
pub fn global_avgpool_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let xs = x.shape();
    let inv = T::one() / T::from_usize(xs.plane().max(1)).unwrap();
    let mut out = Tensor::zeros((xs.n, xs.c, 1, 1));
    for n in 0..xs.n {
        for c in 0..xs.c {
            let s: T = x.plane(n, c).iter().copied().sum();
            out.data_mut()[n * xs.c + c] = s * inv;
        }
    }
    out
}

pub fn global_avgpool_backward<T: Scalar>(grad_out: &Tensor<T>, input_shape: Shape) -> Result<Tensor<T>> {
    let expect = Shape::new(input_shape.n, input_shape.c, 1, 1);
    if grad_out.shape() != expect {
        return Err(Error::shape("global_avgpool_backward", grad_out.shape(), expect));
    }
    let inv = T::one() / T::from_usize(input_shape.plane().max(1)).unwrap();
    let mut dx = Tensor::zeros(input_shape);
    for n in 0..input_shape.n {
        for c in 0..input_shape.c {
            let g = grad_out.data()[n * input_shape.c + c] * inv;
            dx.plane_mut(n, c).fill(g);
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_computes_affine_map() {
        let lw = LinearWeights {
            out_features: 2,
            in_features: 3,
            weight: vec![1.0f32, 2.0, 3.0, -1.0, 0.0, 1.0],
            bias: vec![0.5, -0.5],
        };
        let x = Tensor::from_vec((1, 3, 1, 1), vec![1.0f32, 1.0, 2.0]).unwrap();
        let y = linear_forward(&x, &lw).unwrap();
        assert_eq!(y.data(), &[9.5, 0.5]);
    }

    #[test]
    fn avgpool_of_constant_plane() {
        let x = Tensor::<f32>::full((2, 3, 4, 4), 2.0);
        let y = global_avgpool_forward(&x);
        assert_eq!(y.shape(), Shape::new(2, 3, 1, 1));
        assert!(y.data().iter().all(|&v| v == 2.0));
    }
}
