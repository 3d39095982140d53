use super::{same_shape, Scalar, Tensor};
use crate::error::Result;

/// `max(x, 0)`.
pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient flows where the forward output was positive.
pub fn relu_backward<T: Scalar>(grad_out: &Tensor<T>, out: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("relu_backward", grad_out.shape(), out.shape())?;
    let data = grad_out
        .data()
        .iter()
        .zip(out.data())
        .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(out.shape(), data)
}

/// Residual join `x + F(x)`.
pub fn add_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("add", a.shape(), b.shape())?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

/// Both operands receive the upstream gradient unchanged.
pub fn add_backward<T: Scalar>(grad_out: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    (grad_out.clone(), grad_out.clone())
}
