use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::one_hot;
use crate::parallel::par_map;

/// Frames per forward pass during evaluation.
pub const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnrMetrics {
    pub snr_db: i16,
    pub accuracy: f64,
    pub n: usize,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MetricsRecord {
    pub epochs: Vec<EpochMetrics>,
    /// Epoch whose weights were kept (minimum validation loss).
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub per_snr: Vec<SnrMetrics>,
    /// SNR levels of the dataset with no evaluated frames.
    pub empty_snr: Vec<i16>,
    pub highest_accuracy: Option<f64>,
    pub average_accuracy: Option<f64>,
}

impl MetricsRecord {
    /// Mean bucket accuracy over SNRs at or above `min_snr`.
    pub fn mean_accuracy_from(&self, min_snr: i16) -> Option<f64> {
        let acc: Vec<f64> = self
            .per_snr
            .iter()
            .filter(|s| s.snr_db >= min_snr)
            .map(|s| s.accuracy)
            .collect();
        (!acc.is_empty()).then(|| acc.iter().sum::<f64>() / acc.len() as f64)
    }

    pub fn accuracy_at(&self, snr: i16) -> Option<f64> {
        self.per_snr
            .iter()
            .find(|s| s.snr_db == snr)
            .map(|s| s.accuracy)
    }
}

/// Mean loss and accuracy of `model` over the frames `idx`.
pub fn evaluate_loss(model: &Model, data: &Dataset, idx: &[usize]) -> Result<(f64, f64)> {
    if idx.is_empty() {
        return Err(Error::input("no frames to evaluate"));
    }
    let chunks: Vec<&[usize]> = idx.chunks(EVAL_BATCH).collect();
    let parts = par_map(chunks.len(), |c| -> Result<(f64, usize)> {
        let (x, labels) = data.batch(chunks[c])?;
        let y = one_hot(&labels, model.spec.classes)?;
        let (loss, preds) = model.loss(&x, &y)?;
        let hits = preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
        Ok((loss * chunks[c].len() as f64, hits))
    });
    let (mut loss, mut hits) = (0.0, 0);
    for p in parts {
        let (l, h) = p?;
        loss += l;
        hits += h;
    }
    Ok((loss / idx.len() as f64, hits as f64 / idx.len() as f64))
}

/// Predicted class for each frame of `idx`, in order.
pub fn predict_frames(model: &Model, data: &Dataset, idx: &[usize]) -> Result<Vec<usize>> {
    let chunks: Vec<&[usize]> = idx.chunks(EVAL_BATCH).collect();
    let parts = par_map(chunks.len(), |c| -> Result<Vec<usize>> {
        let (x, _) = data.batch(chunks[c])?;
        model.predict(&x)
    });
    let mut out = Vec::with_capacity(idx.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Per-SNR accuracy and confusion matrices from true and predicted labels.
/// Levels of `snr_levels` with no frames are listed in `empty_snr`.
pub fn score_predictions(
    truth: &[usize],
    predicted: &[usize],
    snr: &[i16],
    snr_levels: &[i16],
    classes: usize,
) -> Result<MetricsRecord> {
    if truth.len() != predicted.len() || truth.len() != snr.len() {
        return Err(Error::dim("labels, predictions and SNRs differ in length"));
    }
    if truth.is_empty() {
        return Err(Error::input("no frames to evaluate"));
    }
    let mut levels: Vec<i16> = snr_levels.iter().chain(snr).copied().collect();
    levels.sort_unstable();
    levels.dedup();
    let mut rec = MetricsRecord::default();
    for level in levels {
        let mut confusion = vec![vec![0usize; classes]; classes];
        let mut n = 0;
        for ((&t, &p), &s) in truth.iter().zip(predicted).zip(snr) {
            if s == level {
                if t >= classes || p >= classes {
                    return Err(Error::input(format!(
                        "label {t} or prediction {p} out of range"
                    )));
                }
                confusion[t][p] += 1;
                n += 1;
            }
        }
        if n == 0 {
            rec.empty_snr.push(level);
            continue;
        }
        let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
        rec.per_snr.push(SnrMetrics {
            snr_db: level,
            accuracy: correct as f64 / n as f64,
            n,
            confusion,
        });
    }
    let acc: Vec<f64> = rec.per_snr.iter().map(|s| s.accuracy).collect();
    rec.highest_accuracy = acc.iter().copied().reduce(f64::max);
    rec.average_accuracy = Some(acc.iter().sum::<f64>() / acc.len() as f64);
    Ok(rec)
}

/// Accuracy per SNR bucket over the frames `idx`.
pub fn evaluate_per_snr(model: &Model, data: &Dataset, idx: &[usize]) -> Result<MetricsRecord> {
    if model.spec.classes != data.num_classes() || model.spec.length != data.length() {
        return Err(Error::config(format!(
            "model expects L={} with {} classes, dataset has L={} with {}",
            model.spec.length,
            model.spec.classes,
            data.length(),
            data.num_classes()
        )));
    }
    let predicted = predict_frames(model, data, idx)?;
    let truth: Vec<usize> = idx
        .iter()
        .map(|&i| data.frames[i].class_id as usize)
        .collect();
    let snr: Vec<i16> = idx.iter().map(|&i| data.frames[i].snr_db).collect();
    score_predictions(
        &truth,
        &predicted,
        &snr,
        &data.manifest.snr_db,
        data.num_classes(),
    )
}
