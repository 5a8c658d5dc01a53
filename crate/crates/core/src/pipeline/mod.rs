//! Experimental protocol: stratified 6:2:2 split, training with plateau
//! scheduling and early stopping, per-SNR scoring, pruning fine-tune,
//! variant ablation and constellation export.

mod ablation;
mod constellation;
mod evaluate;
mod prune;
pub mod report;
mod split;
mod train;

pub use ablation::{run_ablation, AblationReport, AblationRun, SnrSummary, HIGH_SNR_DB};
pub use constellation::{
    cluster_tightness, export_constellation, ConstellationReport, FrameTightness, KMEANS_RESTARTS,
};
pub use evaluate::{
    evaluate_loss, evaluate_per_snr, predict_frames, score_predictions, EpochMetrics,
    MetricsRecord, SnrMetrics, EVAL_BATCH,
};
pub use prune::{prune_finetune, PruneEpoch};
pub use split::{split_dataset, Split, SplitSpec, MIN_CELL};
pub use train::{train, train_with, EpochReport, Resume, TrainConfig, TrainState};
