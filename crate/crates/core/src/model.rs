//! The phase-estimating CNN-GRU classifier and its classifier-only
//! ablation.
//!
//! Dataflow for a `[batch, 2, L]` input:
//!
//! ```text
//! estimator (2L -> 1, linear) -> rotate by -phi
//!   -> conv1 75 x (2x8) ReLU   [1, L-7, 75]
//!   -> conv2 25 x (1x5) ReLU   [1, L-11, 25]
//!   -> GRU 128 (last state)    [128]
//!   -> dense C softmax         [C]
//! ```
//!
//! The `Part3Only` variant drops the estimator and the rotation and feeds
//! the raw frame to conv1.

use std::fmt;
use std::str::FromStr;

use serde_json::json;

use crate::error::{Error, Result};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::conv::{conv2d_backward, conv2d_forward};
use crate::nn::dense::{affine, dense_backward, softmax_in_place};
use crate::nn::gru::{gru_backward, gru_forward, gru_forward_cached, GruCache, GruWeights};
use crate::nn::init::{glorot_uniform, orthogonal};
use crate::nn::loss::softmax_cross_entropy;
use crate::nn::params::ParamStore;
use crate::nn::tensor::{Real, Tensor};
use crate::pet::{estimate_flat, rotate_flat, rotate_flat_backward};
use crate::rng::{substream, Stream};

pub const CONV1_FILTERS: usize = 75;
pub const CONV1_KERNEL: (usize, usize) = (2, 8);
pub const CONV2_FILTERS: usize = 25;
pub const CONV2_KERNEL: (usize, usize) = (1, 5);
pub const GRU_UNITS: usize = 128;

/// Shortest frame the convolution stack accepts (one GRU step).
pub const MIN_LENGTH: usize = CONV1_KERNEL.1 + CONV2_KERNEL.1 - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Estimator + rotation + classifier.
    Full,
    /// Classifier only.
    Part3Only,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Part3Only => "part3_only",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "part3" | "part3_only" => Ok(Variant::Part3Only),
            other => Err(Error::config(format!("unknown model variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    /// Frame length L.
    pub length: usize,
    /// Number of classes C.
    pub classes: usize,
    pub variant: Variant,
}

impl ModelSpec {
    pub fn new(length: usize, classes: usize, variant: Variant) -> Self {
        ModelSpec {
            length,
            classes,
            variant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length < MIN_LENGTH {
            return Err(Error::config(format!(
                "frame length {} unsupported, need at least {MIN_LENGTH}",
                self.length
            )));
        }
        if self.classes < 2 {
            return Err(Error::config(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        Ok(())
    }

    /// GRU sequence length, `L - 11`.
    pub fn steps(&self) -> usize {
        self.length - MIN_LENGTH + 1
    }

    /// Per-sample activation shapes from input to output.
    pub fn shape_chain(&self) -> Vec<Vec<usize>> {
        let l1 = self.length - CONV1_KERNEL.1 + 1;
        vec![
            vec![2, self.length, 1],
            vec![1, l1, CONV1_FILTERS],
            vec![1, self.steps(), CONV2_FILTERS],
            vec![GRU_UNITS],
            vec![self.classes],
        ]
    }

    /// `(name, shape, prunable)` for every parameter, in storage order.
    pub fn layout(&self) -> Vec<(&'static str, Vec<usize>, bool)> {
        let g3 = 3 * GRU_UNITS;
        let mut v = Vec::new();
        if self.variant == Variant::Full {
            v.push(("estimator.kernel", vec![2 * self.length, 1], true));
            v.push(("estimator.bias", vec![1], false));
        }
        v.extend([
            (
                "conv1.kernel",
                vec![CONV1_KERNEL.0, CONV1_KERNEL.1, 1, CONV1_FILTERS],
                true,
            ),
            ("conv1.bias", vec![CONV1_FILTERS], false),
            (
                "conv2.kernel",
                vec![CONV2_KERNEL.0, CONV2_KERNEL.1, CONV1_FILTERS, CONV2_FILTERS],
                true,
            ),
            ("conv2.bias", vec![CONV2_FILTERS], false),
            ("gru.kernel", vec![CONV2_FILTERS, g3], true),
            ("gru.recurrent_kernel", vec![GRU_UNITS, g3], true),
            ("gru.bias", vec![2, g3], false),
            ("dense.kernel", vec![GRU_UNITS, self.classes], true),
            ("dense.bias", vec![self.classes], false),
        ]);
        v
    }
}

/// Closed-form parameter count.
pub fn count_params(spec: &ModelSpec) -> usize {
    let estimator = match spec.variant {
        Variant::Full => 2 * spec.length + 1,
        Variant::Part3Only => 0,
    };
    let conv1 = CONV1_KERNEL.0 * CONV1_KERNEL.1 * CONV1_FILTERS + CONV1_FILTERS;
    let conv2 = CONV2_KERNEL.0 * CONV2_KERNEL.1 * CONV1_FILTERS * CONV2_FILTERS + CONV2_FILTERS;
    let gru = 3 * (GRU_UNITS * CONV2_FILTERS + GRU_UNITS * GRU_UNITS + 2 * GRU_UNITS);
    let dense = GRU_UNITS * spec.classes + spec.classes;
    estimator + conv1 + conv2 + gru + dense
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    /// `[batch, C]`, rows sum to one.
    pub probs: Tensor<T>,
    /// `[batch]`; zeros for the classifier-only variant.
    pub phi: Tensor<T>,
    /// `[batch, 2, L]`, the rotated frames (the input for the
    /// classifier-only variant).
    pub transformed: Tensor<T>,
}

struct Trace<T> {
    phi: Vec<T>,
    transformed: Tensor<T>,
    a1: Tensor<T>,
    a2: Tensor<T>,
    gru: Option<GruCache<T>>,
    last: Tensor<T>,
    logits: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T = f32> {
    pub spec: ModelSpec,
    pub params: ParamStore<T>,
}

impl Model<f32> {
    /// Fresh model with Glorot-uniform kernels, an orthogonal recurrent
    /// kernel and zero biases. Each layer draws from its own substream, so
    /// both variants share classifier weights for the same seed.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self> {
        Model::<f32>::build_as(spec, seed)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_params(&self.params, self.meta())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let spec = spec_from_meta(&ck.meta)?;
        let params = ck.to_params()?;
        let model = Model { spec, params };
        model.check_layout()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_checkpoint().write(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}

/// Parse `{length, classes, variant}` from checkpoint metadata.
pub fn spec_from_meta(meta: &serde_json::Value) -> Result<ModelSpec> {
    let field = |k: &str| {
        meta.get(k)
            .ok_or_else(|| Error::config(format!("checkpoint metadata lacks `{k}`")))
    };
    let length = field("length")?
        .as_u64()
        .ok_or_else(|| Error::config("`length` must be an integer"))? as usize;
    let classes = field("classes")?
        .as_u64()
        .ok_or_else(|| Error::config("`classes` must be an integer"))? as usize;
    let variant = field("variant")?
        .as_str()
        .ok_or_else(|| Error::config("`variant` must be a string"))?
        .parse()?;
    let spec = ModelSpec::new(length, classes, variant);
    spec.validate()?;
    Ok(spec)
}

impl<T: Real> Model<T> {
    pub fn build_as(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let chain = spec.shape_chain();
        debug_assert_eq!(chain[1][1], spec.length - 7);
        debug_assert_eq!(chain[2][1], spec.length - 11);
        let mut params = ParamStore::new();
        for (layer, (name, shape, _)) in spec.layout().into_iter().enumerate() {
            let mut rng = substream(seed, Stream::Init, stream_id(name, layer));
            let value: Tensor<T> = match name {
                "gru.recurrent_kernel" => orthogonal(shape[0], shape[1], &mut rng),
                n if n.ends_with("kernel") => {
                    let (fan_in, fan_out) = fans(&shape);
                    glorot_uniform(&shape, fan_in, fan_out, &mut rng)
                }
                _ => Tensor::zeros(&shape),
            };
            params.insert(name, value, name.ends_with("kernel"))?;
        }
        let model = Model { spec, params };
        model.check_layout()?;
        Ok(model)
    }

    fn meta(&self) -> serde_json::Value {
        json!({
            "length": self.spec.length,
            "classes": self.spec.classes,
            "variant": self.spec.variant.as_str(),
        })
    }

    /// Error unless the stored parameters match the spec's layout exactly.
    pub fn check_layout(&self) -> Result<()> {
        let layout = self.spec.layout();
        if layout.len() != self.params.len() {
            return Err(Error::config(format!(
                "model {} expects {} tensors, found {}",
                self.spec.variant,
                layout.len(),
                self.params.len()
            )));
        }
        for ((name, shape, prunable), (have, p)) in layout.iter().zip(self.params.iter()) {
            if *name != have || p.value.shape() != shape.as_slice() || p.prunable != *prunable {
                return Err(Error::config(format!(
                    "parameter `{have}` {:?} does not match expected `{name}` {shape:?}",
                    p.value.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            spec: self.spec,
            params: self.params.cast(),
        }
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<usize> {
        if batch.rank() != 3 || batch.shape()[1] != 2 || batch.shape()[2] != self.spec.length {
            return Err(Error::dim(format!(
                "model expects [batch, 2, {}], got {:?}",
                self.spec.length,
                batch.shape()
            )));
        }
        Ok(batch.shape()[0])
    }

    fn trace(&self, batch: &Tensor<T>, phases: Option<&[T]>, keep_cache: bool) -> Result<Trace<T>> {
        let n = self.check_batch(batch)?;
        let l = self.spec.length;
        let frame = 2 * l;

        let (phi, transformed) = match (self.spec.variant, phases) {
            (Variant::Part3Only, _) => (vec![T::zero(); n], batch.clone()),
            (Variant::Full, given) => {
                let phi: Vec<T> = match given {
                    Some(p) => {
                        if p.len() != n {
                            return Err(Error::dim("one phase per frame required"));
                        }
                        p.to_vec()
                    }
                    None => {
                        let w = self.params.value("estimator.kernel")?.data();
                        let b = self.params.value("estimator.bias")?.data()[0];
                        batch
                            .data()
                            .chunks(frame)
                            .map(|x| estimate_flat(x, w, b))
                            .collect()
                    }
                };
                let mut out = vec![T::zero(); batch.len()];
                for ((x, o), &p) in batch
                    .data()
                    .chunks(frame)
                    .zip(out.chunks_mut(frame))
                    .zip(&phi)
                {
                    rotate_flat(x, p, o);
                }
                (phi, Tensor::from_vec(batch.shape(), out)?)
            }
        };

        let x4 = transformed.clone().reshape(&[n, 2, l, 1])?;
        let a1 = conv2d_forward(
            &x4,
            self.params.value("conv1.kernel")?,
            self.params.value("conv1.bias")?,
            true,
        )?;
        let a2 = conv2d_forward(
            &a1,
            self.params.value("conv2.kernel")?,
            self.params.value("conv2.bias")?,
            true,
        )?;
        let steps = self.spec.steps();
        let a2 = a2.reshape(&[n, steps, CONV2_FILTERS])?;
        let gw = GruWeights::from_store(&self.params, "gru", GRU_UNITS)?;
        let (last, gru) = if keep_cache {
            let (last, cache) = gru_forward_cached(&a2, &gw)?;
            (last, Some(cache))
        } else {
            (gru_forward(&a2, &gw)?, None)
        };
        let logits = affine(
            &last,
            self.params.value("dense.kernel")?,
            self.params.value("dense.bias")?,
        )?;
        Ok(Trace {
            phi,
            transformed,
            a1,
            a2,
            gru,
            last,
            logits,
        })
    }

    fn output(&self, trace: Trace<T>) -> Result<ForwardOutput<T>> {
        let mut probs = trace.logits;
        let c = self.spec.classes;
        for row in probs.data_mut().chunks_mut(c) {
            softmax_in_place(row);
        }
        let n = trace.phi.len();
        Ok(ForwardOutput {
            probs,
            phi: Tensor::from_vec(&[n], trace.phi)?,
            transformed: trace.transformed,
        })
    }

    pub fn forward(&self, batch: &Tensor<T>) -> Result<ForwardOutput<T>> {
        let trace = self.trace(batch, None, false)?;
        self.output(trace)
    }

    /// Forward pass with the estimator bypassed: frame `i` is rotated by
    /// `phases[i]`. Only meaningful for the full variant.
    pub fn forward_with_phases(&self, batch: &Tensor<T>, phases: &[T]) -> Result<ForwardOutput<T>> {
        if self.spec.variant != Variant::Full {
            return Err(Error::config("phase override needs the full variant"));
        }
        let trace = self.trace(batch, Some(phases), false)?;
        self.output(trace)
    }

    /// Active/inactive state of every ReLU unit for `batch`, in layer order.
    /// Two parameter settings with equal patterns lie on the same linear
    /// piece of the network.
    pub fn relu_pattern(&self, batch: &Tensor<T>) -> Result<Vec<bool>> {
        let trace = self.trace(batch, None, false)?;
        Ok(trace
            .a1
            .data()
            .iter()
            .chain(trace.a2.data())
            .map(|&v| v > T::zero())
            .collect())
    }

    /// Class with the highest probability per frame.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Vec<usize>> {
        let trace = self.trace(batch, None, false)?;
        Ok(argmax_rows(&trace.logits))
    }

    /// Mean cross-entropy on `labels` (one-hot `[batch, C]`) without
    /// touching gradients. Also returns the per-frame predictions.
    pub fn loss(&self, batch: &Tensor<T>, labels: &Tensor<T>) -> Result<(f64, Vec<usize>)> {
        let trace = self.trace(batch, None, false)?;
        let (loss, _) = softmax_cross_entropy(&trace.logits, labels)?;
        Ok((loss, argmax_rows(&trace.logits)))
    }

    /// Forward and backward pass. Overwrites every parameter gradient with
    /// the gradient of the mean cross-entropy and returns the loss.
    pub fn backward(&mut self, batch: &Tensor<T>, labels: &Tensor<T>) -> Result<f64> {
        Ok(self.backward_with_predictions(batch, labels)?.0)
    }

    pub fn backward_with_predictions(
        &mut self,
        batch: &Tensor<T>,
        labels: &Tensor<T>,
    ) -> Result<(f64, Vec<usize>)> {
        let trace = self.trace(batch, None, true)?;
        let n = trace.phi.len();
        labels.expect_shape(&[n, self.spec.classes], "labels")?;
        let (loss, dlogits) = softmax_cross_entropy(&trace.logits, labels)?;
        let predictions = argmax_rows(&trace.logits);
        self.params.zero_grad();

        let dense = dense_backward(&trace.last, self.params.value("dense.kernel")?, &dlogits)?;
        self.params.accumulate("dense.kernel", &dense.w)?;
        self.params.accumulate("dense.bias", &dense.b)?;

        let gw = GruWeights::from_store(&self.params, "gru", GRU_UNITS)?;
        let cache = trace.gru.as_ref().expect("trace keeps the GRU cache");
        let gru = gru_backward(&trace.a2, &gw, cache, &dense.x)?;
        let mut dz2 = gru.x;
        relu_mask(&mut dz2, &trace.a2);
        self.params.accumulate("gru.kernel", &gru.kernel)?;
        self.params
            .accumulate("gru.recurrent_kernel", &gru.recurrent)?;
        self.params.accumulate("gru.bias", &gru.bias)?;

        let steps = self.spec.steps();
        let dz2 = dz2.reshape(&[n, 1, steps, CONV2_FILTERS])?;
        let c2 = conv2d_backward(&trace.a1, self.params.value("conv2.kernel")?, &dz2)?;
        self.params.accumulate("conv2.kernel", &c2.k)?;
        self.params.accumulate("conv2.bias", &c2.b)?;
        let mut dz1 = c2.x;
        relu_mask(&mut dz1, &trace.a1);

        let l = self.spec.length;
        let x4 = trace.transformed.reshape(&[n, 2, l, 1])?;
        let c1 = conv2d_backward(&x4, self.params.value("conv1.kernel")?, &dz1)?;
        self.params.accumulate("conv1.kernel", &c1.k)?;
        self.params.accumulate("conv1.bias", &c1.b)?;

        if self.spec.variant == Variant::Full {
            let frame = 2 * l;
            let mut dw = vec![T::zero(); frame];
            let mut db = T::zero();
            let mut scratch = vec![T::zero(); frame];
            for ((x, up), &p) in batch
                .data()
                .chunks(frame)
                .zip(c1.x.data().chunks(frame))
                .zip(&trace.phi)
            {
                let dphi = rotate_flat_backward(x, p, up, &mut scratch);
                for (d, &xv) in dw.iter_mut().zip(x) {
                    *d += dphi * xv;
                }
                db += dphi;
            }
            self.params
                .accumulate("estimator.kernel", &Tensor::from_vec(&[frame, 1], dw)?)?;
            self.params
                .accumulate("estimator.bias", &Tensor::from_vec(&[1], vec![db])?)?;
        }
        Ok((loss, predictions))
    }
}

fn relu_mask<T: Real>(grad: &mut Tensor<T>, activation: &Tensor<T>) {
    for (g, &a) in grad.data_mut().iter_mut().zip(activation.data()) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

fn argmax_rows<T: Real>(m: &Tensor<T>) -> Vec<usize> {
    let c = m.shape()[1];
    m.data()
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Glorot fans: dense `[in, out]`, conv `[kh, kw, cin, cout]`.
fn fans(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        2 => (shape[0], shape[1]),
        4 => {
            let rf = shape[0] * shape[1];
            (rf * shape[2], rf * shape[3])
        }
        _ => unreachable!("kernels are rank 2 or 4"),
    }
}

/// Stable per-layer stream ids, independent of whether the estimator exists.
fn stream_id(name: &str, fallback: usize) -> u64 {
    const NAMES: [&str; 11] = [
        "estimator.kernel",
        "estimator.bias",
        "conv1.kernel",
        "conv1.bias",
        "conv2.kernel",
        "conv2.bias",
        "gru.kernel",
        "gru.recurrent_kernel",
        "gru.bias",
        "dense.kernel",
        "dense.bias",
    ];
    NAMES.iter().position(|n| *n == name).unwrap_or(fallback) as u64
}
