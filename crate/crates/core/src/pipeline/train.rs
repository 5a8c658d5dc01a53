use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::evaluate::{evaluate_loss, EpochMetrics, MetricsRecord};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{adam_step, one_hot, AdamState, ParamStore};
use crate::rng::{substream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    /// Learning-rate multiplier applied on a validation plateau.
    pub lr_factor: f64,
    /// Epochs without improvement before the learning rate is cut.
    pub lr_patience: usize,
    pub min_lr: f64,
    /// Epochs without improvement before training stops.
    pub early_stop_patience: usize,
    /// Validation loss must drop by more than this to count as improved.
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            max_epochs: 200,
            learning_rate: 1e-3,
            lr_factor: 0.5,
            lr_patience: 5,
            min_lr: 1e-6,
            early_stop_patience: 50,
            min_delta: 1e-6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::config(
                "batch size and epoch count must be at least 1",
            ));
        }
        if self.lr_patience == 0 || self.early_stop_patience == 0 {
            return Err(Error::config("patience values must be at least 1"));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(Error::config(format!(
                "plateau factor {} outside (0, 1)",
                self.lr_factor
            )));
        }
        let positive = self.learning_rate > 0.0;
        let non_negative = self.min_lr >= 0.0 && self.min_delta >= 0.0;
        if !positive || !non_negative {
            return Err(Error::config(
                "learning rates and threshold must be non-negative",
            ));
        }
        Ok(())
    }

    /// Optimizer steps per epoch over `n` training frames.
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

/// Loop counters carried across epochs; serializable so interrupted runs
/// continue exactly.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainState {
    pub epochs_done: usize,
    pub best_val_loss: Option<f64>,
    pub best_epoch: Option<usize>,
    pub since_best: usize,
    pub since_plateau: usize,
    pub history: Vec<EpochMetrics>,
}

/// Everything needed to continue a run: loop counters, optimizer state and
/// the best weights so far.
#[derive(Debug, Clone)]
pub struct Resume {
    pub state: TrainState,
    pub adam: AdamState<f32>,
    pub best: Option<ParamStore<f32>>,
}

/// Passed to the per-epoch observer after validation.
pub struct EpochReport<'a> {
    pub metrics: &'a EpochMetrics,
    pub model: &'a Model,
    pub adam: &'a AdamState<f32>,
    pub state: &'a TrainState,
    pub improved: bool,
}

/// Per-step callbacks used by mask-preserving fine-tuning.
pub(crate) trait StepHooks {
    fn before_step(&mut self, _model: &mut Model, _step: u64) -> Result<()> {
        Ok(())
    }
    fn after_backward(&mut self, _model: &mut Model) -> Result<()> {
        Ok(())
    }
    fn after_update(&mut self, _model: &mut Model) -> Result<()> {
        Ok(())
    }
}

struct NoHooks;
impl StepHooks for NoHooks {}

/// One pass over `idx` in a seeded shuffled order. Returns the mean
/// training loss and accuracy.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_epoch(
    model: &mut Model,
    adam: &mut AdamState<f32>,
    data: &Dataset,
    idx: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
    step: &mut u64,
    hooks: &mut dyn StepHooks,
) -> Result<(f64, f64)> {
    let mut order = idx.to_vec();
    order.shuffle(&mut substream(cfg.seed, Stream::Shuffle, epoch as u64));
    let (mut loss_sum, mut hits) = (0.0f64, 0usize);
    for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
        hooks.before_step(model, *step)?;
        let (x, labels) = data.batch(chunk)?;
        let y = one_hot(&labels, model.spec.classes)?;
        let (loss, preds) = model.backward_with_predictions(&x, &y)?;
        if !loss.is_finite() {
            return Err(Error::Training {
                epoch,
                step: b,
                message: format!("loss is {loss}"),
            });
        }
        hooks.after_backward(model)?;
        adam_step(&mut model.params, adam);
        hooks.after_update(model)?;
        *step += 1;
        loss_sum += loss * chunk.len() as f64;
        hits += preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok((loss_sum / idx.len() as f64, hits as f64 / idx.len() as f64))
}

fn check_inputs(model: &Model, data: &Dataset, train: &[usize], val: &[usize]) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::input(
            "training and validation splits must be nonempty",
        ));
    }
    if model.spec.length != data.length() || model.spec.classes != data.num_classes() {
        return Err(Error::config(format!(
            "model expects L={} with {} classes, dataset has L={} with {}",
            model.spec.length,
            model.spec.classes,
            data.length(),
            data.num_classes()
        )));
    }
    Ok(())
}

/// Train with plateau learning-rate halving and early stopping; returns the
/// weights of the lowest-validation-loss epoch.
pub fn train(
    model: Model,
    data: &Dataset,
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
) -> Result<(Model, MetricsRecord)> {
    train_with(model, data, train_idx, val_idx, cfg, None, |_| Ok(()))
}

/// [`train`] with an optional resume point and a per-epoch observer.
pub fn train_with<F>(
    mut model: Model,
    data: &Dataset,
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
    resume: Option<Resume>,
    mut observer: F,
) -> Result<(Model, MetricsRecord)>
where
    F: FnMut(&EpochReport) -> Result<()>,
{
    cfg.validate()?;
    check_inputs(&model, data, train_idx, val_idx)?;
    let (mut state, mut adam, mut best) = match resume {
        Some(r) => {
            if r.state.best_val_loss.is_some() && r.best.is_none() {
                return Err(Error::config(
                    "resume state has a best loss but no best weights",
                ));
            }
            (r.state, r.adam, r.best)
        }
        None => (
            TrainState::default(),
            AdamState::new(cfg.learning_rate),
            None,
        ),
    };
    let mut step = adam.step;
    while state.epochs_done < cfg.max_epochs && state.since_best < cfg.early_stop_patience {
        let epoch = state.epochs_done;
        let lr = adam.lr;
        let (train_loss, train_acc) = run_epoch(
            &mut model,
            &mut adam,
            data,
            train_idx,
            cfg,
            epoch,
            &mut step,
            &mut NoHooks,
        )?;
        let (val_loss, val_acc) = evaluate_loss(&model, data, val_idx)?;
        if !val_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                step: cfg.steps_per_epoch(train_idx.len()),
                message: format!("validation loss is {val_loss}"),
            });
        }
        let improved = state
            .best_val_loss
            .is_none_or(|b| val_loss < b - cfg.min_delta);
        if improved {
            state.best_val_loss = Some(val_loss);
            state.best_epoch = Some(epoch);
            state.since_best = 0;
            state.since_plateau = 0;
            best = Some(model.params.clone());
        } else {
            state.since_best += 1;
            state.since_plateau += 1;
            if state.since_plateau >= cfg.lr_patience {
                adam.lr = (adam.lr * cfg.lr_factor).max(cfg.min_lr);
                state.since_plateau = 0;
            }
        }
        state.history.push(EpochMetrics {
            epoch,
            lr,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        });
        state.epochs_done += 1;
        observer(&EpochReport {
            metrics: state.history.last().expect("just pushed"),
            model: &model,
            adam: &adam,
            state: &state,
            improved,
        })?;
    }
    if let Some(p) = best {
        model.params = p;
    }
    model.params.zero_grad();
    let record = MetricsRecord {
        epochs: state.history,
        best_epoch: state.best_epoch,
        best_val_loss: state.best_val_loss,
        ..Default::default()
    };
    Ok((model, record))
}
