//! Gradual magnitude pruning: a cubic sparsity schedule, per-tensor binary
//! masks and NNZ accounting. The mask-preserving fine-tuning loop lives in
//! [`crate::pipeline::prune_finetune`].

use indexmap::IndexMap;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::checkpoint::Entry;
use crate::nn::{ParamStore, Real, Tensor};

/// Default number of optimizer steps between mask updates.
pub const DEFAULT_PRUNE_FREQUENCY: u64 = 100;

/// Sparsity ramp from `initial` at `begin_step` to `target` after
/// `increments` updates spaced `frequency` steps apart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SparsitySchedule {
    pub initial: f64,
    pub target: f64,
    pub begin_step: u64,
    pub frequency: u64,
    pub increments: u64,
}

impl SparsitySchedule {
    pub fn new(
        initial: f64,
        target: f64,
        begin_step: u64,
        frequency: u64,
        increments: u64,
    ) -> Result<Self> {
        let s = SparsitySchedule {
            initial,
            target,
            begin_step,
            frequency,
            increments,
        };
        s.validate()?;
        Ok(s)
    }

    /// Ramp from zero to `target` over `total_steps`, updating masks every
    /// `frequency` steps (clamped to `total_steps`).
    pub fn over_steps(target: f64, total_steps: u64, frequency: u64) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::config("pruning needs at least one training step"));
        }
        if frequency == 0 {
            return Err(Error::config("pruning frequency must be at least 1"));
        }
        let frequency = frequency.min(total_steps);
        Self::new(0.0, target, 0, frequency, total_steps / frequency)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.initial.is_finite() || !self.target.is_finite() {
            return Err(Error::config("sparsity values must be finite"));
        }
        if !(0.0..1.0).contains(&self.initial) {
            return Err(Error::config(format!(
                "initial sparsity {} outside [0, 1)",
                self.initial
            )));
        }
        if !(self.target > self.initial && self.target <= 1.0) {
            return Err(Error::config(format!(
                "final sparsity {} must lie in ({}, 1]",
                self.target, self.initial
            )));
        }
        if self.frequency == 0 || self.increments == 0 {
            return Err(Error::config(
                "pruning frequency and increment count must be at least 1",
            ));
        }
        Ok(())
    }

    /// Last step of the ramp.
    pub fn end_step(&self) -> u64 {
        self.begin_step + self.increments * self.frequency
    }

    /// Whether masks are recomputed at `step`.
    pub fn on_grid(&self, step: u64) -> bool {
        step >= self.begin_step
            && step <= self.end_step()
            && (step - self.begin_step).is_multiple_of(self.frequency)
    }

    /// Scheduled sparsity at a grid step.
    pub fn sparsity_at(&self, step: u64) -> Result<f64> {
        if !self.on_grid(step) {
            return Err(Error::Range(format!(
                "step {step} is not on the pruning grid {}..={} every {}",
                self.begin_step,
                self.end_step(),
                self.frequency
            )));
        }
        let k = (step - self.begin_step) / self.frequency;
        if k == 0 {
            return Ok(self.initial);
        }
        let remaining = 1.0 - k as f64 / self.increments as f64;
        Ok(self.target + (self.initial - self.target) * remaining.powi(3))
    }
}

/// One binary mask per prunable tensor, in parameter order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MaskSet {
    masks: IndexMap<String, Vec<bool>>,
}

impl MaskSet {
    /// All-ones masks for every prunable tensor.
    pub fn ones<T: Real>(params: &ParamStore<T>) -> Self {
        let masks = params
            .iter()
            .filter(|(_, p)| p.prunable)
            .map(|(name, p)| (name.to_string(), vec![true; p.value.len()]))
            .collect();
        MaskSet { masks }
    }

    pub fn get(&self, name: &str) -> Option<&[bool]> {
        self.masks.get(name).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[bool])> {
        self.masks.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// Zero every masked weight.
    pub fn apply<T: Real>(&self, params: &mut ParamStore<T>) -> Result<()> {
        for (name, mask) in &self.masks {
            let p = params.get_mut(name)?;
            for (w, &keep) in p.value.data_mut().iter_mut().zip(mask) {
                if !keep {
                    *w = T::zero();
                }
            }
        }
        Ok(())
    }

    /// Discard gradients of masked weights.
    pub fn mask_grads<T: Real>(&self, params: &mut ParamStore<T>) -> Result<()> {
        for (name, mask) in &self.masks {
            let p = params.get_mut(name)?;
            for (g, &keep) in p.grad.data_mut().iter_mut().zip(mask) {
                if !keep {
                    *g = T::zero();
                }
            }
        }
        Ok(())
    }

    /// Masks as 0/1 tensors shaped like their weights, for checkpoints.
    pub fn to_entries<T: Real>(&self, params: &ParamStore<T>) -> Result<Vec<Entry>> {
        self.masks
            .iter()
            .map(|(name, mask)| {
                let shape = params.get(name)?.value.shape().to_vec();
                let data = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
                Ok(Entry {
                    name: name.clone(),
                    tensor: Tensor::from_vec(&shape, data)?,
                    prunable: true,
                })
            })
            .collect()
    }

    pub fn from_entries(entries: &[Entry]) -> Result<Self> {
        let mut masks = IndexMap::new();
        for e in entries {
            let mut bits = Vec::with_capacity(e.tensor.len());
            for &v in e.tensor.data() {
                bits.push(match v {
                    0.0 => false,
                    1.0 => true,
                    _ => {
                        return Err(Error::input(format!(
                            "mask `{}` holds non-binary value {v}",
                            e.name
                        )))
                    }
                });
            }
            masks.insert(e.name.clone(), bits);
        }
        Ok(MaskSet { masks })
    }
}

/// Recompute every prunable tensor's mask at sparsity `s`: the
/// `floor(s * N)` smallest-magnitude weights of each tensor are masked
/// (equal magnitudes: already-masked first, then lower index) and the
/// weights are multiplied by the mask in place.
pub fn apply_magnitude_masks<T: Real>(
    params: &mut ParamStore<T>,
    masks: &mut MaskSet,
    s: f64,
) -> Result<()> {
    if !(0.0..1.0).contains(&s) {
        return Err(Error::input(format!("sparsity {s} outside [0, 1)")));
    }
    for (name, p) in params.iter_mut() {
        if !p.prunable {
            continue;
        }
        let w = p.value.data_mut();
        let n = w.len();
        let prune = (s * n as f64).floor() as usize;
        let prev = masks.masks.get(name);
        let was_masked = |i: usize| prev.is_some_and(|m| !m[i]);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            w[a].abs()
                .partial_cmp(&w[b].abs())
                .expect("finite weights")
                .then_with(|| was_masked(b).cmp(&was_masked(a)))
                .then(a.cmp(&b))
        });
        let mut mask = vec![true; n];
        for &i in &order[..prune] {
            mask[i] = false;
            w[i] = T::zero();
        }
        masks.masks.insert(name.to_string(), mask);
    }
    Ok(())
}

/// Unmasked prunable scalars plus every non-prunable scalar. Tensors with
/// no mask count in full.
pub fn count_nnz<T: Real>(params: &ParamStore<T>, masks: &MaskSet) -> usize {
    layer_nnz(params, masks).iter().map(|l| l.nnz).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerNnz {
    pub name: String,
    pub total: usize,
    pub nnz: usize,
    pub prunable: bool,
}

/// Per-tensor breakdown behind [`count_nnz`].
pub fn layer_nnz<T: Real>(params: &ParamStore<T>, masks: &MaskSet) -> Vec<LayerNnz> {
    params
        .iter()
        .map(|(name, p)| {
            let total = p.value.len();
            let nnz = match masks.get(name) {
                Some(m) if p.prunable => m.iter().filter(|&&k| k).count(),
                _ => total,
            };
            LayerNnz {
                name: name.to_string(),
                total,
                nnz,
                prunable: p.prunable,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let s = SparsitySchedule::new(0.0, 0.8, 0, 100, 10).unwrap();
        assert_eq!(s.sparsity_at(0).unwrap(), 0.0);
        assert_eq!(s.sparsity_at(1000).unwrap(), 0.8);
        assert!((s.sparsity_at(500).unwrap() - 0.7).abs() < 1e-15);
        let s = SparsitySchedule::new(0.13, 0.91, 7, 3, 5).unwrap();
        assert_eq!(s.sparsity_at(7).unwrap(), 0.13);
        assert_eq!(s.sparsity_at(22).unwrap(), 0.91);
    }

    #[test]
    fn off_grid_steps_are_range_errors() {
        let s = SparsitySchedule::new(0.0, 0.5, 10, 5, 4).unwrap();
        for t in [0, 9, 11, 31, 35] {
            assert!(matches!(s.sparsity_at(t), Err(Error::Range(_))), "{t}");
        }
    }

    #[test]
    fn schedule_validation() {
        assert!(SparsitySchedule::new(0.5, 0.5, 0, 1, 1).is_err());
        assert!(SparsitySchedule::new(-0.1, 0.5, 0, 1, 1).is_err());
        assert!(SparsitySchedule::new(0.0, 1.1, 0, 1, 1).is_err());
        assert!(SparsitySchedule::new(0.0, 0.5, 0, 0, 1).is_err());
        assert!(SparsitySchedule::new(0.0, 0.5, 0, 1, 0).is_err());
        assert!(SparsitySchedule::new(0.0, f64::NAN, 0, 1, 1).is_err());
        let s = SparsitySchedule::over_steps(0.8, 50, 100).unwrap();
        assert_eq!((s.frequency, s.increments, s.end_step()), (50, 1, 50));
        let s = SparsitySchedule::over_steps(0.8, 5160, 100).unwrap();
        assert_eq!((s.increments, s.end_step()), (51, 5100));
    }

    fn store(w: &[f32]) -> ParamStore<f32> {
        let mut ps = ParamStore::new();
        ps.insert("k", Tensor::from_vec(&[w.len()], w.to_vec()).unwrap(), true)
            .unwrap();
        ps.insert("b", Tensor::full(&[3], 0.5), false).unwrap();
        ps
    }

    #[test]
    fn magnitude_mask_example() {
        let mut ps = store(&[0.1, -0.5, 0.3, 0.05]);
        let mut masks = MaskSet::ones(&ps);
        apply_magnitude_masks(&mut ps, &mut masks, 0.5).unwrap();
        assert_eq!(masks.get("k").unwrap(), &[false, true, true, false]);
        assert_eq!(ps.value("k").unwrap().data(), &[0.0, -0.5, 0.3, 0.0]);
        assert_eq!(count_nnz(&ps, &masks), 2 + 3);
    }

    #[test]
    fn zero_sparsity_keeps_everything() {
        let mut ps = store(&[0.1, -0.5, 0.0, 0.05]);
        let before = ps.clone();
        let mut masks = MaskSet::ones(&ps);
        apply_magnitude_masks(&mut ps, &mut masks, 0.0).unwrap();
        assert!(masks.get("k").unwrap().iter().all(|&m| m));
        assert_eq!(ps, before);
    }

    #[test]
    fn ties_prune_lower_index_first() {
        let mut ps = store(&[0.2, -0.2, 0.2, 0.2]);
        let mut masks = MaskSet::ones(&ps);
        apply_magnitude_masks(&mut ps, &mut masks, 0.75).unwrap();
        assert_eq!(masks.get("k").unwrap(), &[false, false, false, true]);
    }

    #[test]
    fn out_of_range_sparsity() {
        let mut ps = store(&[1.0]);
        let mut masks = MaskSet::ones(&ps);
        for s in [-0.1, 1.0, f64::NAN] {
            assert!(matches!(
                apply_magnitude_masks(&mut ps, &mut masks, s),
                Err(Error::Input(_))
            ));
        }
    }

    #[test]
    fn mask_entries_round_trip() {
        let mut ps = store(&[0.1, -0.5, 0.3, 0.05]);
        let mut masks = MaskSet::ones(&ps);
        apply_magnitude_masks(&mut ps, &mut masks, 0.5).unwrap();
        let entries = masks.to_entries(&ps).unwrap();
        assert_eq!(MaskSet::from_entries(&entries).unwrap(), masks);
    }
}
