use indexmap::IndexMap;

use super::params::ParamStore;
use super::tensor::{Real, Tensor};

/// Adam optimizer state. Moments are created lazily per parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub moments: IndexMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Real> Default for AdamState<T> {
    fn default() -> Self {
        Self::new(1e-3)
    }
}

impl<T: Real> AdamState<T> {
    pub fn new(lr: f64) -> Self {
        AdamState {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            moments: IndexMap::new(),
        }
    }
}

/// Bias-corrected Adam update of every parameter from its gradient, then
/// zero the gradients.
pub fn adam_step<T: Real>(params: &mut ParamStore<T>, state: &mut AdamState<T>) {
    if params.is_empty() {
        return;
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(state.beta1), T::lit(state.beta2));
    let c1 = T::lit(1.0 - state.beta1.powi(t));
    let c2 = T::lit(1.0 - state.beta2.powi(t));
    let lr = T::lit(state.lr);
    let eps = T::lit(state.epsilon);
    for (name, p) in params.iter_mut() {
        let (m, v) = state.moments.entry(name.to_string()).or_insert_with(|| {
            (
                Tensor::zeros(p.value.shape()),
                Tensor::zeros(p.value.shape()),
            )
        });
        let iter = p
            .value
            .data_mut()
            .iter_mut()
            .zip(p.grad.data_mut().iter_mut())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((w, g), (m, v)) in iter {
            *m = b1 * *m + (T::one() - b1) * *g;
            *v = b2 * *v + (T::one() - b2) * *g * *g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
            *g = T::zero();
        }
    }
}
