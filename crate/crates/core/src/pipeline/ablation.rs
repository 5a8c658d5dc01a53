use serde::Serialize;

use super::evaluate::{evaluate_per_snr, MetricsRecord};
use super::split::Split;
use super::train::{train, TrainConfig};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec, Variant};

/// SNR at or above which buckets count as high-SNR.
pub const HIGH_SNR_DB: i16 = 0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRun {
    pub variant: Variant,
    pub seed: u64,
    pub metrics: MetricsRecord,
    /// Mean bucket accuracy at SNR >= 0 dB.
    pub high_snr_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnrSummary {
    pub snr_db: i16,
    pub full_mean: f64,
    pub full_std: f64,
    pub part3_mean: f64,
    pub part3_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub config: TrainConfig,
    pub runs: Vec<AblationRun>,
    pub per_snr: Vec<SnrSummary>,
    pub full_high_snr: f64,
    pub part3_high_snr: f64,
    /// `full_high_snr - part3_high_snr`.
    pub high_snr_gap: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Train both variants for every seed on the same split. Per seed, the two
/// runs share the initial classifier weights and the shuffling order; only
/// the phase stage differs. `observer` sees every trained model.
pub fn run_ablation<F>(
    data: &Dataset,
    split: &Split,
    cfg: &TrainConfig,
    seeds: &[u64],
    mut observer: F,
) -> Result<AblationReport>
where
    F: FnMut(&AblationRun, &Model) -> Result<()>,
{
    if seeds.len() < 3 {
        return Err(Error::config(format!(
            "ablation needs at least 3 seeds, got {}",
            seeds.len()
        )));
    }
    let mut runs = Vec::with_capacity(2 * seeds.len());
    for &seed in seeds {
        for variant in [Variant::Full, Variant::Part3Only] {
            let spec = ModelSpec::new(data.length(), data.num_classes(), variant);
            let run_cfg = TrainConfig { seed, ..*cfg };
            let model = Model::build(spec, seed)?;
            let (model, mut metrics) = train(model, data, &split.train, &split.val, &run_cfg)?;
            let eval = evaluate_per_snr(&model, data, &split.test)?;
            metrics.per_snr = eval.per_snr;
            metrics.empty_snr = eval.empty_snr;
            metrics.highest_accuracy = eval.highest_accuracy;
            metrics.average_accuracy = eval.average_accuracy;
            let run = AblationRun {
                variant,
                seed,
                high_snr_accuracy: metrics.mean_accuracy_from(HIGH_SNR_DB).unwrap_or(f64::NAN),
                metrics,
            };
            observer(&run, &model)?;
            runs.push(run);
        }
    }
    let acc = |v: Variant, snr: i16| -> Vec<f64> {
        runs.iter()
            .filter(|r| r.variant == v)
            .filter_map(|r| r.metrics.accuracy_at(snr))
            .collect()
    };
    let mut levels: Vec<i16> = runs
        .iter()
        .flat_map(|r| r.metrics.per_snr.iter().map(|s| s.snr_db))
        .collect();
    levels.sort_unstable();
    levels.dedup();
    let per_snr = levels
        .into_iter()
        .map(|snr| {
            let (full_mean, full_std) = mean_std(&acc(Variant::Full, snr));
            let (part3_mean, part3_std) = mean_std(&acc(Variant::Part3Only, snr));
            SnrSummary {
                snr_db: snr,
                full_mean,
                full_std,
                part3_mean,
                part3_std,
            }
        })
        .collect();
    let high = |v: Variant| -> f64 {
        let h: Vec<f64> = runs
            .iter()
            .filter(|r| r.variant == v)
            .map(|r| r.high_snr_accuracy)
            .collect();
        mean_std(&h).0
    };
    let (full_high_snr, part3_high_snr) = (high(Variant::Full), high(Variant::Part3Only));
    Ok(AblationReport {
        seeds: seeds.to_vec(),
        config: *cfg,
        runs,
        per_snr,
        full_high_snr,
        part3_high_snr,
        high_snr_gap: full_high_snr - part3_high_snr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_statistics() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }
}
