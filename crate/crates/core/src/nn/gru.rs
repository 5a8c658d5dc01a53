//! Gated recurrent unit, reset-after formulation.
//!
//! Kernels concatenate the gates along their last axis in the order
//! update (z), reset (r), candidate (h). The bias has two rows: row 0 is
//! added to the input projection, row 1 to the recurrent projection. Per
//! step, with `x_* = x_t W_* + bi_*` and `h_* = h_{t-1} U_* + br_*`:
//!
//! ```text
//! z  = sigmoid(x_z + h_z)
//! r  = sigmoid(x_r + h_r)
//! c  = tanh(x_h + r * h_h)
//! h_t = z * h_{t-1} + (1 - z) * c
//! ```

use super::params::ParamStore;
use super::tensor::{gemm, MatRef, Real, Tensor};
use crate::error::{Error, Result};

/// Borrowed GRU weights, shape-checked.
#[derive(Clone, Copy)]
pub struct GruWeights<'a, T> {
    pub kernel: &'a Tensor<T>,
    pub recurrent: &'a Tensor<T>,
    pub bias: &'a Tensor<T>,
    pub input: usize,
    pub units: usize,
}

impl<'a, T: Real> GruWeights<'a, T> {
    pub fn new(
        kernel: &'a Tensor<T>,
        recurrent: &'a Tensor<T>,
        bias: &'a Tensor<T>,
    ) -> Result<Self> {
        if recurrent.rank() != 2 || kernel.rank() != 2 {
            return Err(Error::dim("GRU kernels must be rank 2"));
        }
        let units = recurrent.shape()[0];
        let input = kernel.shape()[0];
        kernel.expect_shape(&[input, 3 * units], "GRU input kernel")?;
        recurrent.expect_shape(&[units, 3 * units], "GRU recurrent kernel")?;
        bias.expect_shape(&[2, 3 * units], "GRU bias")?;
        Ok(GruWeights {
            kernel,
            recurrent,
            bias,
            input,
            units,
        })
    }

    /// Look up `{prefix}.kernel`, `{prefix}.recurrent_kernel` and
    /// `{prefix}.bias`, checking that the layer has `units` units.
    pub fn from_store(store: &'a ParamStore<T>, prefix: &str, units: usize) -> Result<Self> {
        let w = Self::new(
            store.value(&format!("{prefix}.kernel"))?,
            store.value(&format!("{prefix}.recurrent_kernel"))?,
            store.value(&format!("{prefix}.bias"))?,
        )?;
        if w.units != units {
            return Err(Error::config(format!(
                "GRU `{prefix}` has {} units, expected {units}",
                w.units
            )));
        }
        Ok(w)
    }
}

/// Activations saved by the forward pass, time-major `[T, batch, units]`.
#[derive(Debug, Clone)]
pub struct GruCache<T> {
    batch: usize,
    steps: usize,
    /// `h_0 .. h_T`, `T + 1` slabs.
    hidden: Vec<T>,
    z: Vec<T>,
    r: Vec<T>,
    cand: Vec<T>,
    /// Recurrent candidate projection `h_{t-1} U_h + br_h` before the reset gate.
    rec_cand: Vec<T>,
}

/// Final hidden state `h_T` for `x: [batch, T, in]`, starting from `h_0 = 0`.
pub fn gru_forward<T: Real>(x: &Tensor<T>, w: &GruWeights<'_, T>) -> Result<Tensor<T>> {
    let (batch, steps) = check_input(x, w)?;
    let slab = batch * w.units;
    let mut h = vec![T::zero(); slab];
    let mut next = vec![T::zero(); slab];
    let mut buf = StepBuffers::new(batch, w.units);
    for t in 0..steps {
        buf.step(x, w, t, &h, &mut next);
        std::mem::swap(&mut h, &mut next);
    }
    Tensor::from_vec(&[batch, w.units], h)
}

pub fn gru_forward_cached<T: Real>(
    x: &Tensor<T>,
    w: &GruWeights<'_, T>,
) -> Result<(Tensor<T>, GruCache<T>)> {
    let (batch, steps) = check_input(x, w)?;
    let u = w.units;
    let slab = batch * u;
    let mut cache = GruCache {
        batch,
        steps,
        hidden: vec![T::zero(); (steps + 1) * slab],
        z: vec![T::zero(); steps * slab],
        r: vec![T::zero(); steps * slab],
        cand: vec![T::zero(); steps * slab],
        rec_cand: vec![T::zero(); steps * slab],
    };
    let mut buf = StepBuffers::new(batch, u);
    for t in 0..steps {
        let (prev, next) = cache.hidden.split_at_mut((t + 1) * slab);
        buf.step(x, w, t, &prev[t * slab..], &mut next[..slab]);
        for b in 0..batch {
            let g = &buf.gates[b * 3 * u..][..3 * u];
            let at = t * slab + b * u;
            cache.z[at..at + u].copy_from_slice(&g[..u]);
            cache.r[at..at + u].copy_from_slice(&g[u..2 * u]);
            cache.cand[at..at + u].copy_from_slice(&g[2 * u..]);
            cache.rec_cand[at..at + u].copy_from_slice(&buf.hp[b * 3 * u + 2 * u..][..u]);
        }
    }
    let last = cache.hidden[steps * slab..].to_vec();
    Ok((Tensor::from_vec(&[batch, u], last)?, cache))
}

fn check_input<T: Real>(x: &Tensor<T>, w: &GruWeights<'_, T>) -> Result<(usize, usize)> {
    if x.rank() != 3 || x.shape()[2] != w.input {
        return Err(Error::dim(format!(
            "GRU expects input [batch, T, {}], got {:?}",
            w.input,
            x.shape()
        )));
    }
    Ok((x.shape()[0], x.shape()[1]))
}

/// Row `t` of every sequence in `x: [batch, T, in]` as a `batch x in` view.
fn step_view<T: Real>(x: &Tensor<T>, t: usize) -> MatRef<'_, T> {
    let (batch, steps, input) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    MatRef::strided(&x.data()[t * input..], batch, input, steps * input, 1)
}

struct StepBuffers<T> {
    /// Input projection, then gate activations `[z | r | c]` per row.
    gates: Vec<T>,
    /// Recurrent projection `h_{t-1} U + br`.
    hp: Vec<T>,
}

impl<T: Real> StepBuffers<T> {
    fn new(batch: usize, units: usize) -> Self {
        StepBuffers {
            gates: vec![T::zero(); batch * 3 * units],
            hp: vec![T::zero(); batch * 3 * units],
        }
    }

    fn step(
        &mut self,
        x: &Tensor<T>,
        w: &GruWeights<'_, T>,
        t: usize,
        h_prev: &[T],
        h_next: &mut [T],
    ) {
        let u = w.units;
        let g3 = 3 * u;
        let batch = h_prev.len() / u;
        let (bias_in, bias_rec) = w.bias.data().split_at(g3);
        for (gi, hi) in self.gates.chunks_mut(g3).zip(self.hp.chunks_mut(g3)) {
            gi.copy_from_slice(bias_in);
            hi.copy_from_slice(bias_rec);
        }
        gemm(
            T::one(),
            step_view(x, t),
            w.kernel.as_mat(),
            T::one(),
            &mut self.gates,
        );
        gemm(
            T::one(),
            MatRef::new(h_prev, batch, u),
            w.recurrent.as_mat(),
            T::one(),
            &mut self.hp,
        );
        for b in 0..batch {
            let gate = &mut self.gates[b * g3..][..g3];
            let hr = &self.hp[b * g3..][..g3];
            for j in 0..2 * u {
                gate[j] += hr[j];
            }
            T::sigmoid_slice(&mut gate[..2 * u]);
            for j in 0..u {
                gate[2 * u + j] += gate[u + j] * hr[2 * u + j];
            }
            T::tanh_slice(&mut gate[2 * u..]);
            let hp = &h_prev[b * u..][..u];
            let hn = &mut h_next[b * u..][..u];
            for j in 0..u {
                let (z, c) = (gate[j], gate[2 * u + j]);
                hn[j] = z * hp[j] + (T::one() - z) * c;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GruGrads<T> {
    pub x: Tensor<T>,
    pub kernel: Tensor<T>,
    pub recurrent: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Backpropagation through time from the gradient of `h_T`.
pub fn gru_backward<T: Real>(
    x: &Tensor<T>,
    w: &GruWeights<'_, T>,
    cache: &GruCache<T>,
    grad_last: &Tensor<T>,
) -> Result<GruGrads<T>> {
    let (batch, steps) = (cache.batch, cache.steps);
    let u = w.units;
    let g3 = 3 * u;
    let slab = batch * u;
    let input = w.input;
    grad_last.expect_shape(&[batch, u], "GRU upstream gradient")?;
    x.expect_shape(&[batch, steps, input], "GRU input")?;

    // Per step: gradients w.r.t. the input projection and the recurrent
    // projection; they differ only in the candidate block.
    let mut dxp = vec![T::zero(); batch * g3];
    let mut dhp = vec![T::zero(); batch * g3];
    let mut dx_t = vec![T::zero(); batch * input];
    let mut dh = grad_last.data().to_vec();
    let mut dh_prev = vec![T::zero(); slab];
    let mut d_rec = vec![T::zero(); u * g3];
    let mut d_kernel = vec![T::zero(); input * g3];
    let mut d_bias = vec![T::zero(); 2 * g3];
    let mut dx = vec![T::zero(); batch * steps * input];
    for t in (0..steps).rev() {
        let h_prev = &cache.hidden[t * slab..(t + 1) * slab];
        for b in 0..batch {
            let xrow = &mut dxp[b * g3..][..g3];
            let hrow = &mut dhp[b * g3..][..g3];
            for j in 0..u {
                let k = b * u + j;
                let idx = t * slab + k;
                let (z, r, c, hh) = (
                    cache.z[idx],
                    cache.r[idx],
                    cache.cand[idx],
                    cache.rec_cand[idx],
                );
                let g = dh[k];
                let dz = g * (h_prev[k] - c);
                let dc = g * (T::one() - z);
                dh_prev[k] = g * z;
                let dac = dc * (T::one() - c * c);
                let daz = dz * z * (T::one() - z);
                let dar = dac * hh * r * (T::one() - r);
                xrow[j] = daz;
                xrow[u + j] = dar;
                xrow[2 * u + j] = dac;
                hrow[j] = daz;
                hrow[u + j] = dar;
                hrow[2 * u + j] = dac * r;
            }
        }
        let dxp_m = MatRef::new(&dxp, batch, g3);
        let dhp_m = MatRef::new(&dhp, batch, g3);
        gemm(
            T::one(),
            dhp_m,
            w.recurrent.as_mat().t(),
            T::one(),
            &mut dh_prev,
        );
        gemm(
            T::one(),
            MatRef::new(h_prev, batch, u).t(),
            dhp_m,
            T::one(),
            &mut d_rec,
        );
        gemm(
            T::one(),
            step_view(x, t).t(),
            dxp_m,
            T::one(),
            &mut d_kernel,
        );
        gemm(T::one(), dxp_m, w.kernel.as_mat().t(), T::zero(), &mut dx_t);
        for b in 0..batch {
            dx[(b * steps + t) * input..][..input].copy_from_slice(&dx_t[b * input..][..input]);
        }
        let (bi, br) = d_bias.split_at_mut(g3);
        for (xrow, hrow) in dxp.chunks(g3).zip(dhp.chunks(g3)) {
            for j in 0..g3 {
                bi[j] += xrow[j];
                br[j] += hrow[j];
            }
        }
        std::mem::swap(&mut dh, &mut dh_prev);
    }

    Ok(GruGrads {
        x: Tensor::from_vec(&[batch, steps, input], dx)?,
        kernel: Tensor::from_vec(&[input, g3], d_kernel)?,
        recurrent: Tensor::from_vec(&[u, g3], d_rec)?,
        bias: Tensor::from_vec(&[2, g3], d_bias)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use rand::Rng;

    /// Per-timestep scalar evaluation of the gate equations, written
    /// independently of the batched implementation.
    #[allow(clippy::too_many_arguments)]
    fn reference(
        x: &[f64],
        batch: usize,
        steps: usize,
        input: usize,
        wk: &[f64],
        wr: &[f64],
        bias: &[f64],
        u: usize,
    ) -> Vec<f64> {
        let g3 = 3 * u;
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut out = Vec::new();
        for b in 0..batch {
            let mut h = vec![0.0; u];
            for t in 0..steps {
                let xt = &x[(b * steps + t) * input..][..input];
                let proj_x = |col: usize| -> f64 {
                    bias[col] + (0..input).map(|i| xt[i] * wk[i * g3 + col]).sum::<f64>()
                };
                let proj_h = |h: &[f64], col: usize| -> f64 {
                    bias[g3 + col] + (0..u).map(|i| h[i] * wr[i * g3 + col]).sum::<f64>()
                };
                let mut next = vec![0.0; u];
                for j in 0..u {
                    let z = sig(proj_x(j) + proj_h(&h, j));
                    let r = sig(proj_x(u + j) + proj_h(&h, u + j));
                    let c = (proj_x(2 * u + j) + r * proj_h(&h, 2 * u + j)).tanh();
                    next[j] = z * h[j] + (1.0 - z) * c;
                }
                h = next;
            }
            out.extend(h);
        }
        out
    }

    fn tensors(
        input: usize,
        u: usize,
        wk: Vec<f64>,
        wr: Vec<f64>,
        bias: Vec<f64>,
    ) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>) {
        (
            Tensor::from_vec(&[input, 3 * u], wk).unwrap(),
            Tensor::from_vec(&[u, 3 * u], wr).unwrap(),
            Tensor::from_vec(&[2, 3 * u], bias).unwrap(),
        )
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let (k, r, b) = tensors(3, 4, vec![0.0; 36], vec![0.0; 48], vec![0.0; 24]);
        let w = GruWeights::new(&k, &r, &b).unwrap();
        let x = Tensor::from_vec(&[2, 5, 3], (0..30).map(|v| v as f64).collect()).unwrap();
        let h = gru_forward(&x, &w).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_single_step() {
        // z = r = sigmoid(1), candidate = tanh(1), h_1 = (1 - sigmoid(1)) tanh(1)
        let (k, r, b) = tensors(1, 1, vec![1.0; 3], vec![1.0; 3], vec![0.0; 6]);
        let w = GruWeights::new(&k, &r, &b).unwrap();
        let x = Tensor::from_vec(&[1, 1, 1], vec![1.0]).unwrap();
        let h = gru_forward(&x, &w).unwrap();
        assert!((h.data()[0] - 0.20482421480982513).abs() < 1e-12);
    }

    #[test]
    fn production_shape() {
        let k = Tensor::<f32>::zeros(&[25, 384]);
        let r = Tensor::zeros(&[128, 384]);
        let b = Tensor::zeros(&[2, 384]);
        let w = GruWeights::new(&k, &r, &b).unwrap();
        let x = Tensor::zeros(&[1, 117, 25]);
        assert_eq!(gru_forward(&x, &w).unwrap().shape(), &[1, 128]);
    }

    #[test]
    fn missing_entry_is_configuration_error() {
        let mut ps = ParamStore::<f32>::new();
        ps.insert("gru.kernel", Tensor::zeros(&[2, 6]), true)
            .unwrap();
        ps.insert("gru.bias", Tensor::zeros(&[2, 6]), false)
            .unwrap();
        assert!(matches!(
            GruWeights::from_store(&ps, "gru", 2),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn matches_scalar_reference() {
        let mut rng = substream(5, Stream::GradCheck, 1);
        for &(steps, u, input) in &[(1, 1, 1), (3, 2, 2), (4, 3, 2), (4, 3, 5)] {
            let batch = 2;
            let mut draw =
                |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
            let wk = draw(input * 3 * u);
            let wr = draw(u * 3 * u);
            let bias = draw(6 * u);
            let xs = draw(batch * steps * input);
            let want = reference(&xs, batch, steps, input, &wk, &wr, &bias, u);
            let (k, r, b) = tensors(input, u, wk, wr, bias);
            let w = GruWeights::new(&k, &r, &b).unwrap();
            let x = Tensor::from_vec(&[batch, steps, input], xs).unwrap();
            let h = gru_forward(&x, &w).unwrap();
            for (a, e) in h.data().iter().zip(&want) {
                assert!((a - e).abs() < 1e-5, "{a} vs {e}");
            }
            // and in single precision
            let (k32, r32, b32, x32) = (
                k.cast::<f32>(),
                r.cast::<f32>(),
                b.cast::<f32>(),
                x.cast::<f32>(),
            );
            let w32 = GruWeights::new(&k32, &r32, &b32).unwrap();
            let h32 = gru_forward(&x32, &w32).unwrap();
            for (a, e) in h32.data().iter().zip(&want) {
                assert!((*a as f64 - e).abs() < 1e-5);
            }
        }
    }
}
