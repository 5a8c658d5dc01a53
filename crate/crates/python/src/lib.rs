//! Python bindings. Frames cross the boundary as `(i, q)` pairs of float
//! lists; long-running calls release the interpreter lock.

use amr_core::datagen::{
    apply_channel as channel, read_dataset, synth_dataset, write_dataset, ChannelParams,
    Dataset as CoreDataset, DatasetManifest, ModulationScheme,
};
use amr_core::nn::Tensor;
use amr_core::pet::{transform_phase as rotate, IQFrame, PhaseEstimate};
use amr_core::pipeline::{
    evaluate_per_snr, prune_finetune, split_dataset, train_with, SplitSpec, TrainConfig,
};
use amr_core::pruning::{count_nnz, SparsitySchedule as CoreSchedule};
use amr_core::rng::{substream, Stream};
use amr_core::{Error, Model as CoreModel, ModelSpec, Variant};
use num_complex::Complex64;
use pyo3::exceptions::{PyIOError, PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Input(_) | Error::Range(_) => {
            PyValueError::new_err(e.to_string())
        }
        Error::Format { .. } | Error::Io(_) | Error::Json(_) => PyIOError::new_err(e.to_string()),
        Error::Training { .. } | Error::Dimension(_) => PyRuntimeError::new_err(e.to_string()),
    }
}

type PyRes<T> = PyResult<T>;

fn variant(name: &str) -> PyRes<Variant> {
    name.parse().map_err(to_py)
}

/// `[n, 2, L]` batch from `(i, q)` pairs.
fn batch(frames: &[(Vec<f32>, Vec<f32>)], length: usize) -> PyRes<Tensor<f32>> {
    let mut data = Vec::with_capacity(frames.len() * 2 * length);
    for (i, q) in frames {
        if i.len() != length || q.len() != length {
            return Err(PyValueError::new_err(format!(
                "every frame needs {length} I and Q samples"
            )));
        }
        data.extend_from_slice(i);
        data.extend_from_slice(q);
    }
    Tensor::from_vec(&[frames.len(), 2, length], data).map_err(to_py)
}

/// Synthetic labelled I/Q frames.
#[pyclass(name = "Dataset", module = "amr", frozen)]
struct PyDataset {
    inner: CoreDataset,
}

#[pymethods]
impl PyDataset {
    /// Generate a dataset. `schemes` defaults to all eight and `snr_db` to
    /// -20..18 dB in 2 dB steps.
    #[staticmethod]
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (schemes=None, length=128, snr_db=None, frames_per_cell=200, seed=0, random_phase=true, omega_max=0.01))]
    fn synth(
        py: Python<'_>,
        schemes: Option<Vec<String>>,
        length: usize,
        snr_db: Option<Vec<i16>>,
        frames_per_cell: usize,
        seed: u64,
        random_phase: bool,
        omega_max: f64,
    ) -> PyRes<Self> {
        let mut m = DatasetManifest {
            length,
            frames_per_cell,
            seed,
            random_phase,
            omega_max,
            ..Default::default()
        };
        if let Some(names) = schemes {
            m.schemes = names
                .iter()
                .map(|s| s.parse::<ModulationScheme>())
                .collect::<Result<_, _>>()
                .map_err(to_py)?;
        }
        if let Some(snr) = snr_db {
            m.snr_db = snr;
        }
        m.validate().map_err(to_py)?;
        let inner = py.detach(|| synth_dataset(&m)).map_err(to_py)?;
        Ok(PyDataset { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyRes<Self> {
        Ok(PyDataset {
            inner: read_dataset(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyRes<()> {
        write_dataset(&self.inner, path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn length(&self) -> usize {
        self.inner.length()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.manifest.class_names()
    }

    #[getter]
    fn manifest_json(&self) -> PyRes<String> {
        serde_json::to_string(&self.inner.manifest).map_err(|e| to_py(e.into()))
    }

    /// `(i, q, class_id, snr_db)` of frame `index`.
    fn frame(&self, index: usize) -> PyRes<(Vec<f32>, Vec<f32>, u16, i16)> {
        let f = self
            .inner
            .frames
            .get(index)
            .ok_or_else(|| PyIndexError::new_err(format!("frame {index} out of range")))?;
        Ok((f.iq.i().to_vec(), f.iq.q().to_vec(), f.class_id, f.snr_db))
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(frames={}, classes={}, length={})",
            self.inner.len(),
            self.inner.num_classes(),
            self.inner.length()
        )
    }
}

/// Phase estimator, rotation and CNN-GRU classifier.
#[pyclass(name = "Model", module = "amr")]
struct PyModel {
    inner: CoreModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (length=128, classes=8, variant="full", seed=0))]
    fn new(length: usize, classes: usize, variant: &str, seed: u64) -> PyRes<Self> {
        let spec = ModelSpec::new(length, classes, self::variant(variant)?);
        Ok(PyModel {
            inner: CoreModel::build(spec, seed).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyRes<Self> {
        Ok(PyModel {
            inner: CoreModel::load(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyRes<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.spec.variant.as_str()
    }

    #[getter]
    fn length(&self) -> usize {
        self.inner.spec.length
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.spec.classes
    }

    /// Class probabilities and estimated phases for `(i, q)` frames.
    fn forward(
        &self,
        py: Python<'_>,
        frames: Vec<(Vec<f32>, Vec<f32>)>,
    ) -> PyRes<(Vec<Vec<f32>>, Vec<f32>)> {
        let x = batch(&frames, self.inner.spec.length)?;
        let out = py.detach(|| self.inner.forward(&x)).map_err(to_py)?;
        let c = self.inner.spec.classes;
        let probs = out.probs.data().chunks(c).map(<[f32]>::to_vec).collect();
        Ok((probs, out.phi.data().to_vec()))
    }

    fn predict(&self, py: Python<'_>, frames: Vec<(Vec<f32>, Vec<f32>)>) -> PyRes<Vec<usize>> {
        let x = batch(&frames, self.inner.spec.length)?;
        py.detach(|| self.inner.predict(&x)).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(length={}, classes={}, variant='{}', params={})",
            self.inner.spec.length,
            self.inner.spec.classes,
            self.inner.spec.variant,
            self.inner.num_params()
        )
    }
}

/// Polynomial sparsity ramp from `initial` to `target`.
#[pyclass(name = "SparsitySchedule", module = "amr", frozen)]
struct PySchedule {
    inner: CoreSchedule,
}

#[pymethods]
impl PySchedule {
    #[new]
    #[pyo3(signature = (target, begin_step=0, frequency=100, increments=1, initial=0.0))]
    fn new(
        target: f64,
        begin_step: u64,
        frequency: u64,
        increments: u64,
        initial: f64,
    ) -> PyRes<Self> {
        Ok(PySchedule {
            inner: CoreSchedule::new(initial, target, begin_step, frequency, increments)
                .map_err(to_py)?,
        })
    }

    /// Sparsity at grid step `step`; raises `ValueError` off the grid.
    fn sparsity_at(&self, step: u64) -> PyRes<f64> {
        self.inner.sparsity_at(step).map_err(to_py)
    }

    #[getter]
    fn end_step(&self) -> u64 {
        self.inner.end_step()
    }
}

/// Trainable parameter count of a model configuration.
#[pyfunction]
#[pyo3(signature = (length, classes, variant="full"))]
fn count_params(length: usize, classes: usize, variant: &str) -> PyRes<usize> {
    let spec = ModelSpec::new(length, classes, self::variant(variant)?);
    spec.validate().map_err(to_py)?;
    Ok(amr_core::count_params(&spec))
}

/// Rotate a frame by `-phi` radians.
#[pyfunction]
fn transform_phase(i: Vec<f32>, q: Vec<f32>, phi: f32) -> PyRes<(Vec<f32>, Vec<f32>)> {
    let frame = IQFrame::from_iq(&i, &q).map_err(to_py)?;
    let out = rotate(&frame, PhaseEstimate { phi_hat: phi });
    Ok((out.i().to_vec(), out.q().to_vec()))
}

/// Gain, frequency offset, phase offset and optional AWGN at `snr_db`.
#[pyfunction]
#[pyo3(signature = (i, q, gain=1.0, omega=0.0, phi=0.0, snr_db=None, seed=0))]
fn apply_channel(
    i: Vec<f64>,
    q: Vec<f64>,
    gain: f64,
    omega: f64,
    phi: f64,
    snr_db: Option<f64>,
    seed: u64,
) -> PyRes<(Vec<f64>, Vec<f64>)> {
    if i.len() != q.len() {
        return Err(PyValueError::new_err("I and Q differ in length"));
    }
    let x: Vec<Complex64> = i
        .iter()
        .zip(&q)
        .map(|(&a, &b)| Complex64::new(a, b))
        .collect();
    let ch = ChannelParams {
        gain,
        omega,
        phi,
        snr_db,
    };
    let y = channel(&x, &ch, &mut substream(seed, Stream::Datagen, 0)).map_err(to_py)?;
    Ok((
        y.iter().map(|c| c.re).collect(),
        y.iter().map(|c| c.im).collect(),
    ))
}

fn split_of(data: &CoreDataset, split_seed: u64) -> PyRes<amr_core::pipeline::Split> {
    split_dataset(data, &SplitSpec::with_seed(split_seed)).map_err(to_py)
}

/// Train on the 60% split with plateau halving and early stopping. Returns
/// the best model and one dict per epoch.
#[pyfunction]
#[pyo3(signature = (model, dataset, epochs=200, batch_size=128, learning_rate=1e-3, seed=0, split_seed=0))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    model: &PyModel,
    dataset: &PyDataset,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    seed: u64,
    split_seed: u64,
) -> PyRes<(PyModel, Vec<Bound<'py, PyDict>>)> {
    let data = &dataset.inner;
    let split = split_of(data, split_seed)?;
    let cfg = TrainConfig {
        max_epochs: epochs,
        batch_size,
        learning_rate,
        seed,
        ..Default::default()
    };
    let start = model.inner.clone();
    let (trained, record) = py
        .detach(|| {
            train_with(
                start,
                data,
                &split.train,
                &split.val,
                &cfg,
                None,
                |_| Ok(()),
            )
        })
        .map_err(to_py)?;
    let history = record
        .epochs
        .iter()
        .map(|e| {
            let d = PyDict::new(py);
            d.set_item("epoch", e.epoch)?;
            d.set_item("lr", e.lr)?;
            d.set_item("train_loss", e.train_loss)?;
            d.set_item("train_acc", e.train_acc)?;
            d.set_item("val_loss", e.val_loss)?;
            d.set_item("val_acc", e.val_acc)?;
            Ok(d)
        })
        .collect::<PyRes<Vec<_>>>()?;
    Ok((PyModel { inner: trained }, history))
}

/// Accuracy per SNR over the test split (or every frame with `subset="all"`).
#[pyfunction]
#[pyo3(signature = (model, dataset, subset="test", split_seed=0))]
fn evaluate<'py>(
    py: Python<'py>,
    model: &PyModel,
    dataset: &PyDataset,
    subset: &str,
    split_seed: u64,
) -> PyRes<Bound<'py, PyDict>> {
    let data = &dataset.inner;
    let idx: Vec<usize> = match subset {
        "all" => (0..data.len()).collect(),
        "train" => split_of(data, split_seed)?.train,
        "val" => split_of(data, split_seed)?.val,
        "test" => split_of(data, split_seed)?.test,
        other => return Err(PyValueError::new_err(format!("unknown subset `{other}`"))),
    };
    let rec = py
        .detach(|| evaluate_per_snr(&model.inner, data, &idx))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    for b in &rec.per_snr {
        d.set_item(b.snr_db, b.accuracy)?;
    }
    Ok(d)
}

/// Gradual magnitude pruning to `sparsity` during fine-tuning. Returns the
/// pruned model and its nonzero parameter count.
#[pyfunction]
#[pyo3(signature = (model, dataset, sparsity, epochs=5, batch_size=128, frequency=100, seed=0, split_seed=0))]
#[allow(clippy::too_many_arguments)]
fn prune(
    py: Python<'_>,
    model: &PyModel,
    dataset: &PyDataset,
    sparsity: f64,
    epochs: usize,
    batch_size: usize,
    frequency: u64,
    seed: u64,
    split_seed: u64,
) -> PyRes<(PyModel, usize)> {
    if !(sparsity > 0.0 && sparsity < 1.0) {
        return Err(PyValueError::new_err(format!(
            "sparsity {sparsity} outside (0, 1)"
        )));
    }
    let data = &dataset.inner;
    let split = split_of(data, split_seed)?;
    let cfg = TrainConfig {
        max_epochs: epochs,
        batch_size,
        seed,
        ..Default::default()
    };
    let total = (epochs * cfg.steps_per_epoch(split.train.len())) as u64;
    let schedule = CoreSchedule::over_steps(sparsity, total, frequency).map_err(to_py)?;
    let start = model.inner.clone();
    let (pruned, masks, _) = py
        .detach(|| prune_finetune(start, data, &split.train, &schedule, &cfg))
        .map_err(to_py)?;
    let nnz = count_nnz(&pruned.params, &masks);
    Ok((PyModel { inner: pruned }, nnz))
}

#[pymodule]
fn amr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PySchedule>()?;
    m.add_function(wrap_pyfunction!(count_params, m)?)?;
    m.add_function(wrap_pyfunction!(transform_phase, m)?)?;
    m.add_function(wrap_pyfunction!(apply_channel, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(prune, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
