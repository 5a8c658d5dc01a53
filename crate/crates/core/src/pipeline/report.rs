//! CSV artifacts. Every file starts with a header row.

use std::fmt::Write as _;
use std::path::Path;

use super::ablation::AblationReport;
use super::evaluate::{EpochMetrics, MetricsRecord};
use super::prune::PruneEpoch;
use crate::error::Result;
use crate::pruning::LayerNnz;

fn line(out: &mut String, fields: &[String]) {
    writeln!(out, "{}", fields.join(",")).expect("write to string");
}

pub fn epochs_csv(epochs: &[EpochMetrics]) -> String {
    let mut s = String::from("epoch,lr,train_loss,train_acc,val_loss,val_acc\n");
    for e in epochs {
        line(
            &mut s,
            &[
                e.epoch.to_string(),
                e.lr.to_string(),
                e.train_loss.to_string(),
                e.train_acc.to_string(),
                e.val_loss.to_string(),
                e.val_acc.to_string(),
            ],
        );
    }
    s
}

/// One row per SNR level; levels without test frames have `n = 0` and an
/// empty accuracy field.
pub fn snr_accuracy_csv(m: &MetricsRecord) -> String {
    let mut rows: Vec<(i16, String, usize)> = m
        .per_snr
        .iter()
        .map(|s| (s.snr_db, s.accuracy.to_string(), s.n))
        .chain(m.empty_snr.iter().map(|&s| (s, String::new(), 0)))
        .collect();
    rows.sort_by_key(|r| r.0);
    let mut s = String::from("snr_db,accuracy,n\n");
    for (snr, acc, n) in rows {
        line(&mut s, &[snr.to_string(), acc, n.to_string()]);
    }
    s
}

/// Confusion matrix for one SNR bucket: rows are true classes, columns
/// predictions.
pub fn confusion_csv(confusion: &[Vec<usize>], class_names: &[String]) -> String {
    let mut s = String::new();
    let mut header = vec!["true".to_string()];
    header.extend(class_names.iter().cloned());
    line(&mut s, &header);
    for (name, row) in class_names.iter().zip(confusion) {
        let mut fields = vec![name.clone()];
        fields.extend(row.iter().map(|c| c.to_string()));
        line(&mut s, &fields);
    }
    s
}

/// Mean and sample standard deviation over seeds per SNR.
pub fn ablation_summary_csv(r: &AblationReport) -> String {
    let mut s = String::from("snr_db,full_mean,full_std,part3_only_mean,part3_only_std,seeds\n");
    for p in &r.per_snr {
        line(
            &mut s,
            &[
                p.snr_db.to_string(),
                p.full_mean.to_string(),
                p.full_std.to_string(),
                p.part3_mean.to_string(),
                p.part3_std.to_string(),
                r.seeds.len().to_string(),
            ],
        );
    }
    s
}

/// One row per (variant, seed, SNR).
pub fn ablation_csv(r: &AblationReport) -> String {
    let mut s = String::from("variant,seed,snr_db,accuracy,n\n");
    for run in &r.runs {
        for b in &run.metrics.per_snr {
            line(
                &mut s,
                &[
                    run.variant.to_string(),
                    run.seed.to_string(),
                    b.snr_db.to_string(),
                    b.accuracy.to_string(),
                    b.n.to_string(),
                ],
            );
        }
    }
    s
}

/// Per-tensor NNZ with a closing `total` row.
pub fn nnz_csv(layers: &[LayerNnz]) -> String {
    let mut s = String::from("tensor,total,nnz,prunable\n");
    for l in layers {
        line(
            &mut s,
            &[
                l.name.clone(),
                l.total.to_string(),
                l.nnz.to_string(),
                l.prunable.to_string(),
            ],
        );
    }
    let total: usize = layers.iter().map(|l| l.total).sum();
    let nnz: usize = layers.iter().map(|l| l.nnz).sum();
    line(
        &mut s,
        &[
            "total".into(),
            total.to_string(),
            nnz.to_string(),
            String::new(),
        ],
    );
    s
}

pub fn prune_epochs_csv(epochs: &[PruneEpoch]) -> String {
    let mut s = String::from("epoch,train_loss,train_acc,sparsity,nnz\n");
    for e in epochs {
        line(
            &mut s,
            &[
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.train_acc.to_string(),
                e.sparsity.to_string(),
                e.nnz.to_string(),
            ],
        );
    }
    s
}

/// Write `snr_accuracy.csv` and one `confusion_<snr>.csv` per bucket into
/// `dir`.
pub fn write_evaluation(dir: &Path, m: &MetricsRecord, class_names: &[String]) -> Result<()> {
    std::fs::write(dir.join("snr_accuracy.csv"), snr_accuracy_csv(m))?;
    for b in &m.per_snr {
        std::fs::write(
            dir.join(format!("confusion_{}.csv", b.snr_db)),
            confusion_csv(&b.confusion, class_names),
        )?;
    }
    Ok(())
}
