use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "amr", version, about = "Modulation classification experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Generate a synthetic `.amrd` dataset.
    Synth(SynthArgs),
    /// Train a model and keep the lowest-validation-loss weights.
    Train(TrainArgs),
    /// Magnitude-prune a checkpoint with gradual fine-tuning.
    Prune(PruneArgs),
    /// Per-SNR accuracy and confusion matrices of a checkpoint.
    Eval(EvalArgs),
    /// Train both variants over several seeds and compare them.
    Ablate(AblateArgs),
    /// Export phase-corrected constellations and cluster tightness.
    Constellation(ConstellationArgs),
    /// Re-run the command recorded in a `run.json`.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Prune(_) => "prune",
            Command::Eval(_) => "eval",
            Command::Ablate(_) => "ablate",
            Command::Constellation(_) => "constellation",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseArg {
    /// Rectangular pulses, 4 samples per symbol.
    Rect,
    /// Root-raised cosine, roll-off 0.35, 8 samples per symbol.
    Rrc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainArg {
    Constant,
    Rayleigh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantArg {
    Full,
    #[value(alias = "part3_only")]
    Part3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Comma-separated scheme names; all eight when omitted.
    #[arg(long, value_delimiter = ',')]
    pub schemes: Vec<String>,
    #[arg(long, default_value_t = 200)]
    pub frames_per_cell: usize,
    #[arg(long, default_value_t = -20, allow_negative_numbers = true)]
    pub snr_min: i16,
    #[arg(long, default_value_t = 18, allow_negative_numbers = true)]
    pub snr_max: i16,
    #[arg(long, default_value_t = 2)]
    pub snr_step: u16,
    /// Frame length: 128 or 1024 samples.
    #[arg(long, default_value_t = 128, value_parser = frame_length)]
    pub length: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = PulseArg::Rect)]
    pub pulse: PulseArg,
    /// Largest normalized frequency offset in rad/sample.
    #[arg(long, default_value_t = 0.01)]
    pub omega_max: f64,
    /// Disable the per-frame uniform phase offset.
    #[arg(long)]
    pub no_phase_offset: bool,
    #[arg(long, value_enum, default_value_t = GainArg::Constant)]
    pub gain: GainArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SplitArgs {
    /// Seed of the stratified 6:2:2 split; keep it equal across train,
    /// prune and eval of the same experiment.
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ScheduleArgs {
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Epochs without improvement before the learning rate is halved.
    #[arg(long, default_value_t = 5)]
    pub lr_patience: usize,
    /// Epochs without improvement before training stops.
    #[arg(long, default_value_t = 50)]
    pub early_stop: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = VariantArg::Full)]
    pub variant: VariantArg,
    /// Seeds weight initialisation and batch order.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Continue from a `last.pcgd` written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn frame_length(s: &str) -> Result<usize, String> {
    match s {
        "128" => Ok(128),
        "1024" => Ok(1024),
        other => Err(format!("frame length must be 128 or 1024, got {other}")),
    }
}

fn sparsity(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("sparsity {v} outside (0, 1)"))
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PruneArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Final fraction of zero weights in every prunable tensor.
    #[arg(long, value_parser = sparsity)]
    pub sparsity: f64,
    /// Fine-tuning epochs.
    #[arg(long, visible_alias = "prune-epochs", default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    /// Steps between mask updates.
    #[arg(long, default_value_t = 100)]
    pub prune_freq: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SubsetArg::Test)]
    pub subset: SubsetArg,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Number of seeds; runs use seeds `seed_base .. seed_base + seeds`.
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed_base: u64,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ConstellationArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Only frames of this scheme.
    #[arg(long)]
    pub scheme: Option<String>,
    /// Only frames at this SNR.
    #[arg(long, allow_negative_numbers = true)]
    pub snr: Option<i16>,
    /// Keep at most this many frames, in dataset order.
    #[arg(long)]
    pub max_frames: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// A `run.json` written by any other subcommand.
    pub manifest: PathBuf,
}
