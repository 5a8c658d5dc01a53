use serde::Serialize;

use super::train::{run_epoch, StepHooks, TrainConfig};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::AdamState;
use crate::pruning::{apply_magnitude_masks, count_nnz, MaskSet, SparsitySchedule};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PruneEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    /// Scheduled sparsity of the last mask update so far.
    pub sparsity: f64,
    pub nnz: usize,
}

struct MaskHooks<'a> {
    schedule: &'a SparsitySchedule,
    masks: MaskSet,
    current: f64,
}

impl StepHooks for MaskHooks<'_> {
    fn before_step(&mut self, model: &mut Model, step: u64) -> Result<()> {
        self.update(model, step)
    }

    fn after_backward(&mut self, model: &mut Model) -> Result<()> {
        self.masks.mask_grads(&mut model.params)
    }

    fn after_update(&mut self, model: &mut Model) -> Result<()> {
        self.masks.apply(&mut model.params)
    }
}

impl MaskHooks<'_> {
    fn update(&mut self, model: &mut Model, step: u64) -> Result<()> {
        if self.schedule.on_grid(step) {
            self.current = self.schedule.sparsity_at(step)?;
            apply_magnitude_masks(&mut model.params, &mut self.masks, self.current)?;
        }
        Ok(())
    }
}

/// Fine-tune for `cfg.max_epochs` epochs while ramping magnitude masks along
/// `schedule`. Masked weights stay exactly zero and receive no updates.
pub fn prune_finetune(
    mut model: Model,
    data: &Dataset,
    train_idx: &[usize],
    schedule: &SparsitySchedule,
    cfg: &TrainConfig,
) -> Result<(Model, MaskSet, Vec<PruneEpoch>)> {
    cfg.validate()?;
    schedule.validate()?;
    if train_idx.is_empty() {
        return Err(Error::input("fine-tuning needs training frames"));
    }
    if schedule.target >= 1.0 {
        return Err(Error::config("final sparsity must be below 1"));
    }
    let total = (cfg.max_epochs * cfg.steps_per_epoch(train_idx.len())) as u64;
    if schedule.end_step() > total {
        return Err(Error::config(format!(
            "pruning schedule ends at step {} but fine-tuning runs {total} steps",
            schedule.end_step()
        )));
    }
    let mut hooks = MaskHooks {
        schedule,
        masks: MaskSet::ones(&model.params),
        current: 0.0,
    };
    let mut adam = AdamState::new(cfg.learning_rate);
    let mut step = 0u64;
    let mut log = Vec::with_capacity(cfg.max_epochs);
    for epoch in 0..cfg.max_epochs {
        let (train_loss, train_acc) = run_epoch(
            &mut model, &mut adam, data, train_idx, cfg, epoch, &mut step, &mut hooks,
        )?;
        if epoch + 1 == cfg.max_epochs {
            hooks.update(&mut model, step)?;
        }
        log.push(PruneEpoch {
            epoch,
            train_loss,
            train_acc,
            sparsity: hooks.current,
            nnz: count_nnz(&model.params, &hooks.masks),
        });
    }
    model.params.zero_grad();
    Ok((model, hooks.masks, log))
}
