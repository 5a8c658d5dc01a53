use std::path::{Path, PathBuf};

use amr_core::datagen::{
    read_dataset, synth_dataset, write_dataset, Dataset, DatasetManifest, GainModel,
    ModulationScheme, Waveform,
};
use amr_core::nn::Checkpoint;
use amr_core::pipeline::report::{
    ablation_csv, ablation_summary_csv, epochs_csv, nnz_csv, prune_epochs_csv, write_evaluation,
};
use amr_core::pipeline::{
    evaluate_per_snr, export_constellation, prune_finetune, run_ablation, split_dataset,
    train_with, Resume, Split, SplitSpec, TrainConfig, TrainState,
};
use amr_core::pruning::{count_nnz, layer_nnz, SparsitySchedule};
use amr_core::{Error, Model, ModelSpec, Result, Variant};
use serde_json::json;

use crate::args::*;
use crate::manifest::{manifest_hash, InputFile, RunManifest};

pub fn run(command: Command, argv: Vec<String>) -> Result<()> {
    let mut manifest = RunManifest::new(argv, &command);
    match &command {
        Command::Synth(a) => synth(a, &mut manifest),
        Command::Train(a) => train(a, &mut manifest),
        Command::Prune(a) => prune(a, &mut manifest),
        Command::Eval(a) => eval(a, &mut manifest),
        Command::Ablate(a) => ablate(a, &mut manifest),
        Command::Constellation(a) => constellation(a, &mut manifest),
        Command::Replay(a) => replay(a),
    }
}

fn replay(a: &ReplayArgs) -> Result<()> {
    let recorded = RunManifest::read(&a.manifest)?;
    if matches!(recorded.command, Command::Replay(_)) {
        return Err(Error::Config(
            "a replay manifest cannot itself be replayed".into(),
        ));
    }
    for input in &recorded.inputs {
        input.verify()?;
    }
    if recorded.version != env!("CARGO_PKG_VERSION") {
        eprintln!(
            "warning: recorded with version {}, replaying with {}",
            recorded.version,
            env!("CARGO_PKG_VERSION")
        );
    }
    run(recorded.command, recorded.argv)
}

struct Loaded {
    data: Dataset,
}

fn load_data(path: &Path, manifest: &mut RunManifest) -> Result<Loaded> {
    manifest.inputs.push(InputFile::hash(path)?);
    let data = read_dataset(path)?;
    manifest.dataset_manifest_sha256 = Some(manifest_hash(&data.manifest)?);
    Ok(Loaded { data })
}

fn load_model(path: &Path, manifest: &mut RunManifest) -> Result<Model> {
    manifest.inputs.push(InputFile::hash(path)?);
    Model::load(path)
}

fn check_compatible(model: &Model, data: &Dataset) -> Result<()> {
    if model.spec.length != data.length() || model.spec.classes != data.num_classes() {
        return Err(Error::Config(format!(
            "checkpoint expects L={} with {} classes, dataset has L={} with {}",
            model.spec.length,
            model.spec.classes,
            data.length(),
            data.num_classes()
        )));
    }
    Ok(())
}

fn out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn write_file(path: PathBuf, contents: impl AsRef<[u8]>, manifest: &mut RunManifest) -> Result<()> {
    std::fs::write(&path, contents)?;
    if !manifest.outputs.contains(&path) {
        manifest.outputs.push(path);
    }
    Ok(())
}

fn record(path: PathBuf, manifest: &mut RunManifest) {
    if !manifest.outputs.contains(&path) {
        manifest.outputs.push(path);
    }
}

fn split(data: &Dataset, s: &SplitArgs) -> Result<Split> {
    split_dataset(data, &SplitSpec::with_seed(s.split_seed))
}

fn variant(v: VariantArg) -> Variant {
    match v {
        VariantArg::Full => Variant::Full,
        VariantArg::Part3 => Variant::Part3Only,
    }
}

fn train_config(s: &ScheduleArgs, seed: u64) -> Result<TrainConfig> {
    let cfg = TrainConfig {
        batch_size: s.batch,
        max_epochs: s.epochs,
        learning_rate: s.lr,
        lr_patience: s.lr_patience,
        early_stop_patience: s.early_stop,
        seed,
        ..Default::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn synth(a: &SynthArgs, manifest: &mut RunManifest) -> Result<()> {
    if a.snr_step == 0 || a.snr_min > a.snr_max {
        return Err(Error::Config(format!(
            "SNR range {}..={} step {} is empty",
            a.snr_min, a.snr_max, a.snr_step
        )));
    }
    let schemes = if a.schemes.is_empty() {
        ModulationScheme::ALL.to_vec()
    } else {
        a.schemes
            .iter()
            .map(|s| s.trim().parse())
            .collect::<Result<Vec<ModulationScheme>>>()?
    };
    let m = DatasetManifest {
        schemes,
        length: a.length,
        snr_db: (a.snr_min..=a.snr_max)
            .step_by(a.snr_step as usize)
            .collect(),
        frames_per_cell: a.frames_per_cell,
        seed: a.seed,
        waveform: match a.pulse {
            PulseArg::Rect => Waveform::default(),
            PulseArg::Rrc => Waveform::rrc(),
        },
        omega_max: a.omega_max,
        random_phase: !a.no_phase_offset,
        gain: match a.gain {
            GainArg::Constant => GainModel::Constant,
            GainArg::Rayleigh => GainModel::Rayleigh,
        },
    };
    m.validate()?;
    let data = synth_dataset(&m)?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        out_dir(dir)?;
    }
    write_dataset(&data, &a.out)?;
    record(a.out.clone(), manifest);
    manifest.seeds = vec![a.seed];
    manifest.dataset_manifest_sha256 = Some(manifest_hash(&m)?);
    println!("{}", serde_json::to_string_pretty(&m)?);
    manifest.write(&a.out.with_extension("run.json"))
}

fn resume_from(path: &Path, manifest: &mut RunManifest) -> Result<(Model, Resume)> {
    manifest.inputs.push(InputFile::hash(path)?);
    let ck = Checkpoint::read(path)?;
    let model = Model::from_checkpoint(&ck)?;
    let adam = ck
        .adam_state()?
        .ok_or_else(|| Error::Config(format!("{} has no optimizer state", path.display())))?;
    let extra = &ck.optimizer.as_ref().expect("optimizer present").extra;
    let state: TrainState = serde_json::from_value(
        extra
            .get("train_state")
            .cloned()
            .ok_or_else(|| Error::Config(format!("{} has no training state", path.display())))?,
    )?;
    let best = if state.best_epoch.is_some() {
        let best_path = path.with_file_name("best.pcgd");
        manifest.inputs.push(InputFile::hash(&best_path)?);
        let best = Model::load(&best_path)?;
        if best.spec != model.spec {
            return Err(Error::Config(
                "best.pcgd and the resume checkpoint disagree".into(),
            ));
        }
        Some(best.params)
    } else {
        None
    };
    Ok((model, Resume { state, adam, best }))
}

fn train(a: &TrainArgs, manifest: &mut RunManifest) -> Result<()> {
    let Loaded { data } = load_data(&a.data, manifest)?;
    let split = split(&data, &a.split)?;
    let cfg = train_config(&a.schedule, a.seed)?;
    let spec = ModelSpec::new(data.length(), data.num_classes(), variant(a.variant));
    let (model, resume) = match &a.resume {
        Some(path) => {
            let (model, resume) = resume_from(path, manifest)?;
            if model.spec.variant != spec.variant {
                return Err(Error::Config(format!(
                    "resume checkpoint is {}, --variant asks for {}",
                    model.spec.variant, spec.variant
                )));
            }
            (model, Some(resume))
        }
        None => (Model::build(spec, a.seed)?, None),
    };
    check_compatible(&model, &data)?;
    out_dir(&a.out_dir)?;
    manifest.seeds = vec![a.seed, a.split.split_seed];
    let best_path = a.out_dir.join("best.pcgd");
    let last_path = a.out_dir.join("last.pcgd");
    let epochs_path = a.out_dir.join("epochs.csv");
    let (model, metrics) = train_with(model, &data, &split.train, &split.val, &cfg, resume, |r| {
        let e = r.metrics;
        eprintln!(
            "epoch {:>3}  lr {:.2e}  train {:.4} / {:.4}  val {:.4} / {:.4}{}",
            e.epoch,
            e.lr,
            e.train_loss,
            e.train_acc,
            e.val_loss,
            e.val_acc,
            if r.improved { "  *" } else { "" }
        );
        if r.improved {
            r.model.save(&best_path)?;
        }
        let mut ck = r.model.to_checkpoint();
        ck.set_optimizer(r.adam, json!({ "train_state": r.state }));
        ck.write(&last_path)?;
        std::fs::write(&epochs_path, epochs_csv(&r.state.history))?;
        Ok(())
    })?;
    model.save(&best_path)?;
    record(best_path, manifest);
    record(last_path, manifest);
    write_file(epochs_path, epochs_csv(&metrics.epochs), manifest)?;
    let eval = evaluate_per_snr(&model, &data, &split.test)?;
    write_evaluation(&a.out_dir, &eval, &data.manifest.class_names())?;
    record_evaluation(&a.out_dir, &eval, manifest);
    println!(
        "best epoch {:?}, val loss {:?}, test highest {:.4}, average {:.4}",
        metrics.best_epoch,
        metrics.best_val_loss,
        eval.highest_accuracy.unwrap_or(f64::NAN),
        eval.average_accuracy.unwrap_or(f64::NAN)
    );
    manifest.write(&a.out_dir.join("run.json"))
}

fn record_evaluation(
    dir: &Path,
    eval: &amr_core::pipeline::MetricsRecord,
    manifest: &mut RunManifest,
) {
    record(dir.join("snr_accuracy.csv"), manifest);
    for b in &eval.per_snr {
        record(dir.join(format!("confusion_{}.csv", b.snr_db)), manifest);
    }
}

fn prune(a: &PruneArgs, manifest: &mut RunManifest) -> Result<()> {
    let model = load_model(&a.checkpoint, manifest)?;
    let Loaded { data } = load_data(&a.data, manifest)?;
    check_compatible(&model, &data)?;
    let split = split(&data, &a.split)?;
    let cfg = TrainConfig {
        batch_size: a.batch,
        max_epochs: a.epochs,
        learning_rate: a.lr,
        seed: a.seed,
        ..Default::default()
    };
    cfg.validate()?;
    let total = (a.epochs * cfg.steps_per_epoch(split.train.len())) as u64;
    let schedule = SparsitySchedule::over_steps(a.sparsity, total, a.prune_freq)?;
    manifest.seeds = vec![a.seed, a.split.split_seed];
    eprintln!(
        "fine-tuning {total} steps, masks updated every {} steps up to sparsity {}",
        schedule.frequency, schedule.target
    );
    let (model, masks, log) = prune_finetune(model, &data, &split.train, &schedule, &cfg)?;
    out_dir(&a.out_dir)?;
    let mut ck = model.to_checkpoint();
    ck.masks = masks.to_entries(&model.params)?;
    let ck_path = a.out_dir.join("pruned.pcgd");
    ck.write(&ck_path)?;
    record(ck_path, manifest);
    write_file(
        a.out_dir.join("nnz_report.csv"),
        nnz_csv(&layer_nnz(&model.params, &masks)),
        manifest,
    )?;
    write_file(
        a.out_dir.join("prune_epochs.csv"),
        prune_epochs_csv(&log),
        manifest,
    )?;
    let eval = evaluate_per_snr(&model, &data, &split.test)?;
    write_evaluation(&a.out_dir, &eval, &data.manifest.class_names())?;
    record_evaluation(&a.out_dir, &eval, manifest);
    println!(
        "steps {total}, total NNZ {}, test highest {:.4}, average {:.4}",
        count_nnz(&model.params, &masks),
        eval.highest_accuracy.unwrap_or(f64::NAN),
        eval.average_accuracy.unwrap_or(f64::NAN)
    );
    manifest.write(&a.out_dir.join("run.json"))
}

fn eval(a: &EvalArgs, manifest: &mut RunManifest) -> Result<()> {
    let model = load_model(&a.checkpoint, manifest)?;
    let Loaded { data } = load_data(&a.data, manifest)?;
    check_compatible(&model, &data)?;
    let idx: Vec<usize> = match a.subset {
        SubsetArg::All => (0..data.len()).collect(),
        subset => {
            let s = split(&data, &a.split)?;
            match subset {
                SubsetArg::Train => s.train,
                SubsetArg::Val => s.val,
                _ => s.test,
            }
        }
    };
    manifest.seeds = vec![a.split.split_seed];
    let eval = evaluate_per_snr(&model, &data, &idx)?;
    out_dir(&a.out_dir)?;
    write_evaluation(&a.out_dir, &eval, &data.manifest.class_names())?;
    record_evaluation(&a.out_dir, &eval, manifest);
    println!(
        "{} frames, highest {:.4}, average {:.4}",
        idx.len(),
        eval.highest_accuracy.unwrap_or(f64::NAN),
        eval.average_accuracy.unwrap_or(f64::NAN)
    );
    manifest.write(&a.out_dir.join("run.json"))
}

fn ablate(a: &AblateArgs, manifest: &mut RunManifest) -> Result<()> {
    let Loaded { data } = load_data(&a.data, manifest)?;
    let split = split(&data, &a.split)?;
    let cfg = train_config(&a.schedule, a.seed_base)?;
    let seeds: Vec<u64> = (a.seed_base..a.seed_base + a.seeds).collect();
    manifest.seeds = seeds.clone();
    manifest.seeds.push(a.split.split_seed);
    out_dir(&a.out_dir)?;
    let report = run_ablation(&data, &split, &cfg, &seeds, |run, model| {
        let path = a
            .out_dir
            .join(format!("{}_seed{}.pcgd", run.variant, run.seed));
        model.save(&path)?;
        record(path, manifest);
        eprintln!(
            "{} seed {}: high-SNR accuracy {:.4}",
            run.variant, run.seed, run.high_snr_accuracy
        );
        Ok(())
    })?;
    write_file(
        a.out_dir.join("ablation.csv"),
        ablation_csv(&report),
        manifest,
    )?;
    write_file(
        a.out_dir.join("ablation_summary.csv"),
        ablation_summary_csv(&report),
        manifest,
    )?;
    println!(
        "high-SNR accuracy: full {:.4}, part3_only {:.4}, gap {:+.4}",
        report.full_high_snr, report.part3_high_snr, report.high_snr_gap
    );
    manifest.write(&a.out_dir.join("run.json"))
}

fn constellation(a: &ConstellationArgs, manifest: &mut RunManifest) -> Result<()> {
    let model = load_model(&a.checkpoint, manifest)?;
    let Loaded { data } = load_data(&a.data, manifest)?;
    check_compatible(&model, &data)?;
    let class = match &a.scheme {
        Some(name) => {
            let scheme: ModulationScheme = name.parse()?;
            let pos = data.manifest.schemes.iter().position(|&s| s == scheme);
            Some(pos.ok_or_else(|| {
                Error::Config(format!("scheme {} is not in the dataset", scheme.name()))
            })? as u16)
        }
        None => None,
    };
    let mut idx: Vec<usize> = (0..data.len())
        .filter(|&i| {
            let f = &data.frames[i];
            class.is_none_or(|c| f.class_id == c) && a.snr.is_none_or(|s| f.snr_db == s)
        })
        .collect();
    if let Some(n) = a.max_frames {
        idx.truncate(n);
    }
    if idx.is_empty() {
        return Err(Error::Config("no frames match the selection".into()));
    }
    out_dir(&a.out_dir)?;
    let csv_path = a.out_dir.join("constellation.csv");
    let report = export_constellation(&model, &data, &idx, Some(&csv_path))?;
    record(csv_path, manifest);
    let mut t = String::from("frame_id,class,snr_db,phi_hat,tightness_in,tightness_out\n");
    for f in &report.frames {
        t.push_str(&format!(
            "{},{},{},{},{},{}\n",
            f.frame_id,
            data.manifest.schemes[f.class_id as usize].name(),
            f.snr_db,
            f.phi_hat,
            f.tightness_in,
            f.tightness_out
        ));
    }
    write_file(a.out_dir.join("constellation_tightness.csv"), t, manifest)?;
    println!(
        "{} frames, mean tightness in {:.6}, out {:.6}",
        report.frames.len(),
        report.mean_in,
        report.mean_out
    );
    manifest.write(&a.out_dir.join("run.json"))
}
