//! Phase estimation and transformation.
//!
//! A linear layer maps the flattened I/Q frame to one phase value, and the
//! frame is rotated by minus that phase:
//! `I' = I cos p + Q sin p`, `Q' = Q cos p - I sin p`.
//! The rotation has no trainable parameters; its gradients let the
//! estimator train jointly with the classifier behind it.

use crate::error::{Error, Result};
use crate::nn::tensor::{Real, Tensor};

/// Estimated phase in radians. Unbounded; the rotation is periodic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseEstimate<T = f32> {
    pub phi_hat: T,
}

/// A `2 x L` frame: row 0 in-phase, row 1 quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct IQFrame<T = f32> {
    samples: Tensor<T>,
}

impl<T: Real> IQFrame<T> {
    pub fn new(samples: Tensor<T>) -> Result<Self> {
        if samples.rank() != 2 || samples.shape()[0] != 2 {
            return Err(Error::dim(format!(
                "I/Q frame must be [2, L], got {:?}",
                samples.shape()
            )));
        }
        if !samples.all_finite() {
            return Err(Error::input("I/Q frame contains non-finite values"));
        }
        Ok(IQFrame { samples })
    }

    pub fn from_iq(i: &[T], q: &[T]) -> Result<Self> {
        if i.len() != q.len() {
            return Err(Error::dim("I and Q rows differ in length"));
        }
        let mut data = i.to_vec();
        data.extend_from_slice(q);
        Self::new(Tensor::from_vec(&[2, i.len()], data)?)
    }

    pub fn len(&self) -> usize {
        self.samples.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn samples(&self) -> &Tensor<T> {
        &self.samples
    }

    pub fn into_samples(self) -> Tensor<T> {
        self.samples
    }

    pub fn i(&self) -> &[T] {
        &self.samples.data()[..self.len()]
    }

    pub fn q(&self) -> &[T] {
        &self.samples.data()[self.len()..]
    }
}

/// `flatten(y) . W + b` on a flat `[I row, Q row]` slice.
pub(crate) fn estimate_flat<T: Real>(flat: &[T], w: &[T], b: T) -> T {
    flat.iter().zip(w).map(|(&x, &k)| x * k).sum::<T>() + b
}

/// Rotate a flat `[I row, Q row]` frame by `-phi`, writing into `out`.
pub(crate) fn rotate_flat<T: Real>(input: &[T], phi: T, out: &mut [T]) {
    let l = input.len() / 2;
    if phi == T::zero() {
        out.copy_from_slice(input);
        return;
    }
    let (c, s) = (phi.cos(), phi.sin());
    let (i, q) = input.split_at(l);
    let (oi, oq) = out.split_at_mut(l);
    for n in 0..l {
        oi[n] = i[n] * c + q[n] * s;
        oq[n] = q[n] * c - i[n] * s;
    }
}

/// Backward of [`rotate_flat`]: accumulates the input gradient into
/// `grad_in` and returns the gradient w.r.t. `phi`.
pub(crate) fn rotate_flat_backward<T: Real>(
    input: &[T],
    phi: T,
    upstream: &[T],
    grad_in: &mut [T],
) -> T {
    let l = input.len() / 2;
    let (c, s) = (phi.cos(), phi.sin());
    let (i, q) = input.split_at(l);
    let (gi, gq) = upstream.split_at(l);
    let (di, dq) = grad_in.split_at_mut(l);
    let mut dphi = T::zero();
    for n in 0..l {
        // d I'/d phi = -I sin + Q cos ; d Q'/d phi = -Q sin - I cos
        dphi += gi[n] * (q[n] * c - i[n] * s) - gq[n] * (q[n] * s + i[n] * c);
        di[n] += gi[n] * c - gq[n] * s;
        dq[n] += gi[n] * s + gq[n] * c;
    }
    dphi
}

/// Linear phase estimate from the raw frame. `w` must be `[2L, 1]` and `b`
/// must be `[1]`.
pub fn estimate_phase<T: Real>(
    y: &IQFrame<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<PhaseEstimate<T>> {
    if w.rank() != 2 || w.shape()[1] != 1 {
        return Err(Error::config(format!(
            "phase estimator kernel must have one column, got {:?}",
            w.shape()
        )));
    }
    if w.shape()[0] != 2 * y.len() {
        return Err(Error::dim(format!(
            "phase estimator expects {} inputs, frame has {}",
            w.shape()[0],
            2 * y.len()
        )));
    }
    if b.len() != 1 {
        return Err(Error::config("phase estimator bias must be a single value"));
    }
    Ok(PhaseEstimate {
        phi_hat: estimate_flat(y.samples().data(), w.data(), b.data()[0]),
    })
}

/// `y[l] * exp(-j phi)` for every sample.
pub fn transform_phase<T: Real>(y: &IQFrame<T>, phi: PhaseEstimate<T>) -> IQFrame<T> {
    let mut out = vec![T::zero(); y.samples().len()];
    rotate_flat(y.samples().data(), phi.phi_hat, &mut out);
    IQFrame {
        samples: Tensor::from_vec(y.samples().shape(), out).expect("same shape"),
    }
}

/// Gradients of the rotation w.r.t. its input frame and the phase.
pub fn pet_backward<T: Real>(
    y: &IQFrame<T>,
    phi: PhaseEstimate<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, T)> {
    upstream.expect_shape(y.samples().shape(), "rotation upstream gradient")?;
    let mut grad = vec![T::zero(); upstream.len()];
    let dphi = rotate_flat_backward(y.samples().data(), phi.phi_hat, upstream.data(), &mut grad);
    Ok((Tensor::from_vec(upstream.shape(), grad)?, dphi))
}
