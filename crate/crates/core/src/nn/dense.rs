//! Fully connected layer.

use super::tensor::{gemm, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Softmax,
}

/// `act(x W + b)` for `x: [batch, in]`, `W: [in, out]`, `b: [out]`.
pub fn dense_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    activation: Activation,
) -> Result<Tensor<T>> {
    let z = affine(x, w, b)?;
    Ok(activate(z, activation))
}

/// `x W + b` without activation.
pub fn affine<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 2 || w.rank() != 2 || b.rank() != 1 {
        return Err(Error::dim(format!(
            "dense expects x[batch,in], W[in,out], b[out]; got {:?}, {:?}, {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let (batch, inp) = (x.shape()[0], x.shape()[1]);
    let out = w.shape()[1];
    if w.shape()[0] != inp || b.shape()[0] != out {
        return Err(Error::dim(format!(
            "dense shapes do not conform: x{:?} W{:?} b{:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let mut z = Vec::with_capacity(batch * out);
    for _ in 0..batch {
        z.extend_from_slice(b.data());
    }
    gemm(T::one(), x.as_mat(), w.as_mat(), T::one(), &mut z);
    Tensor::from_vec(&[batch, out], z)
}

pub fn activate<T: Real>(mut z: Tensor<T>, activation: Activation) -> Tensor<T> {
    match activation {
        Activation::Linear => z,
        Activation::Relu => {
            relu_in_place(z.data_mut());
            z
        }
        Activation::Softmax => {
            let cols = *z.shape().last().expect("rank >= 1");
            for row in z.data_mut().chunks_mut(cols) {
                softmax_in_place(row);
            }
            z
        }
    }
}

pub fn relu_in_place<T: Real>(v: &mut [T]) {
    for x in v.iter_mut() {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

/// Numerically stable softmax of one row.
pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Gradient w.r.t. the pre-activation given the activation output `y` and
/// the gradient w.r.t. `y`.
pub fn activation_backward<T: Real>(
    activation: Activation,
    y: &Tensor<T>,
    grad_y: &Tensor<T>,
) -> Tensor<T> {
    match activation {
        Activation::Linear => grad_y.clone(),
        Activation::Relu => {
            let mut g = grad_y.clone();
            for (gv, &yv) in g.data_mut().iter_mut().zip(y.data()) {
                if yv <= T::zero() {
                    *gv = T::zero();
                }
            }
            g
        }
        Activation::Softmax => {
            let cols = *y.shape().last().expect("rank >= 1");
            let mut g = grad_y.clone();
            for (grow, yrow) in g.data_mut().chunks_mut(cols).zip(y.data().chunks(cols)) {
                let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                for (gv, &yv) in grow.iter_mut().zip(yrow) {
                    *gv = yv * (*gv - dot);
                }
            }
            g
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T> {
    pub x: Tensor<T>,
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

/// Backward pass of `x W + b` given the gradient w.r.t. its output.
pub fn dense_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_z: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let (batch, inp) = (x.shape()[0], x.shape()[1]);
    let out = w.shape()[1];
    grad_z.expect_shape(&[batch, out], "dense upstream gradient")?;
    let mut dw = vec![T::zero(); inp * out];
    gemm(
        T::one(),
        x.as_mat().t(),
        grad_z.as_mat(),
        T::zero(),
        &mut dw,
    );
    let mut dx = vec![T::zero(); batch * inp];
    gemm(
        T::one(),
        grad_z.as_mat(),
        w.as_mat().t(),
        T::zero(),
        &mut dx,
    );
    let mut db = vec![T::zero(); out];
    for row in grad_z.data().chunks(out) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    Ok(DenseGrads {
        x: Tensor::from_vec(&[batch, inp], dx)?,
        w: Tensor::from_vec(&[inp, out], dw)?,
        b: Tensor::from_vec(&[out], db)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f32]]) -> Tensor<f32> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn identity_linear() {
        let x = t(&[&[1.0, 2.0]]);
        let w = t(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let b = Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap();
        let y = dense_forward(&x, &w, &b, Activation::Linear).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_clamps_zero_sum() {
        let x = t(&[&[1.0, -1.0]]);
        let w = t(&[&[1.0], &[1.0]]);
        let b = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let y = dense_forward(&x, &w, &b, Activation::Relu).unwrap();
        assert_eq!(y.data(), &[0.0]);
    }

    #[test]
    fn softmax_uniform_logits() {
        let x = t(&[&[0.0, 0.0, 0.0]]);
        let w = t(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let b = Tensor::from_vec(&[3], vec![0.0; 3]).unwrap();
        let y = dense_forward(&x, &w, &b, Activation::Softmax).unwrap();
        for &v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let x = t(&[&[1.0, 2.0, 3.0]]);
        let w = t(&[&[1.0], &[1.0]]);
        let b = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        assert!(matches!(
            dense_forward(&x, &w, &b, Activation::Linear),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let mut row = [1000.0f32, 0.0, -1000.0];
        softmax_in_place(&mut row);
        assert!(row.iter().all(|v| v.is_finite()));
        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }
}
