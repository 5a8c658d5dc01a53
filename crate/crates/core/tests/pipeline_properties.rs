use std::collections::BTreeSet;

use amr_core::datagen::{synth_dataset, Dataset, DatasetManifest, ModulationScheme};
use amr_core::nn::Checkpoint;
use amr_core::pipeline::{
    evaluate_loss, prune_finetune, split_dataset, train, train_with, Resume, SplitSpec,
    TrainConfig, MIN_CELL,
};
use amr_core::pruning::{count_nnz, MaskSet, SparsitySchedule};
use amr_core::{Model, ModelSpec, Variant};
use proptest::prelude::*;

fn toy(frames_per_cell: usize, seed: u64) -> Dataset {
    synth_dataset(&DatasetManifest {
        schemes: vec![ModulationScheme::Bpsk, ModulationScheme::Qpsk],
        length: 32,
        snr_db: vec![4, 12],
        frames_per_cell,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn toy_model(d: &Dataset, variant: Variant, seed: u64) -> Model {
    Model::build(ModelSpec::new(d.length(), d.num_classes(), variant), seed).unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        max_epochs: epochs,
        lr_patience: 1,
        early_stop_patience: 4,
        learning_rate: 3e-3,
        seed: 11,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn allocation_covers_the_cell(n in 0usize..500, train in 0.0f64..1.0, val_share in 0.0f64..1.0) {
        let val = (1.0 - train) * val_share;
        let spec = SplitSpec { train, val, test: 1.0 - train - val, seed: 0 };
        let a = spec.allocate(n);
        prop_assert_eq!(a.iter().sum::<usize>(), n);
        for (k, r) in [spec.train, spec.val, spec.test].into_iter().enumerate() {
            let floor = (r * n as f64).floor() as usize;
            prop_assert!(a[k] >= floor.saturating_sub(1) && a[k] <= floor + 1, "{a:?}");
        }
    }

    #[test]
    fn split_is_a_stratified_partition(fpc in MIN_CELL..14, data_seed in 0u64..50, split_seed in any::<u64>()) {
        let d = toy(fpc, data_seed);
        let spec = SplitSpec::with_seed(split_seed);
        let s = split_dataset(&d, &spec).unwrap();
        prop_assert_eq!(&s, &split_dataset(&d, &spec).unwrap());
        let all: BTreeSet<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        prop_assert_eq!(all.len(), d.len());
        prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), d.len());
        let want = spec.allocate(fpc);
        for cell in d.histogram().keys() {
            let count = |idx: &[usize]| idx.iter()
                .filter(|&&i| (d.frames[i].class_id, d.frames[i].snr_db) == *cell)
                .count();
            prop_assert_eq!([count(&s.train), count(&s.val), count(&s.test)], want);
        }
    }

    #[test]
    fn sparsity_ramp_is_monotone(
        target in 0.05f64..0.99,
        initial_share in 0.0f64..0.9,
        begin in 0u64..50,
        frequency in 1u64..40,
        increments in 1u64..30,
    ) {
        let initial = target * initial_share;
        let s = SparsitySchedule::new(initial, target, begin, frequency, increments).unwrap();
        let grid: Vec<f64> = (0..=increments)
            .map(|k| s.sparsity_at(begin + k * frequency).unwrap())
            .collect();
        prop_assert_eq!(grid[0], initial);
        prop_assert!((grid[increments as usize] - target).abs() < 1e-12);
        prop_assert!(grid.windows(2).all(|w| w[1] >= w[0]));
        if frequency > 1 {
            prop_assert!(s.sparsity_at(begin + 1).is_err());
        }
    }
}

#[test]
fn plateaus_only_halve_and_best_weights_are_kept() {
    let d = toy(10, 3);
    let split = split_dataset(&d, &SplitSpec::with_seed(2)).unwrap();
    let cfg = quick(10);
    let (model, record) = train(
        toy_model(&d, Variant::Full, 4),
        &d,
        &split.train,
        &split.val,
        &cfg,
    )
    .unwrap();
    let lrs: Vec<f64> = record.epochs.iter().map(|e| e.lr).collect();
    for w in lrs.windows(2) {
        let ratio = w[1] / w[0];
        assert!(ratio == 1.0 || (ratio - 0.5).abs() < 1e-12, "{lrs:?}");
    }
    let (best_epoch, best) = record
        .epochs
        .iter()
        .map(|e| (e.epoch, e.val_loss))
        .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    assert_eq!(record.best_epoch, Some(best_epoch));
    assert_eq!(record.best_val_loss, Some(best));
    let (again, _) = evaluate_loss(&model, &d, &split.val).unwrap();
    assert!(
        (again - best).abs() <= 1e-9 * best.max(1.0),
        "{again} vs {best}"
    );
}

#[test]
fn early_stopping_ends_the_run() {
    let d = toy(6, 8);
    let split = split_dataset(&d, &SplitSpec::with_seed(0)).unwrap();
    let cfg = TrainConfig {
        early_stop_patience: 1,
        learning_rate: 0.5,
        ..quick(30)
    };
    let (_, record) = train(
        toy_model(&d, Variant::Part3Only, 0),
        &d,
        &split.train,
        &split.val,
        &cfg,
    )
    .unwrap();
    assert!(
        record.epochs.len() < cfg.max_epochs,
        "{} epochs",
        record.epochs.len()
    );
    let last = record.epochs.len() - 1;
    assert_eq!(record.best_epoch, Some(last - 1));
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let d = toy(6, 5);
    let split = split_dataset(&d, &SplitSpec::with_seed(1)).unwrap();
    let build = || toy_model(&d, Variant::Full, 9);
    let (whole, whole_rec) = train(build(), &d, &split.train, &split.val, &quick(3)).unwrap();

    let (mut snapshot, mut best) = (None, None);
    train_with(
        build(),
        &d,
        &split.train,
        &split.val,
        &quick(2),
        None,
        |r| {
            if r.improved {
                best = Some(r.model.params.clone());
            }
            snapshot = Some((r.model.clone(), r.adam.clone(), r.state.clone()));
            Ok(())
        },
    )
    .unwrap();
    let (current, adam, state) = snapshot.unwrap();
    let resume = Resume { state, adam, best };
    let (resumed, resumed_rec) = train_with(
        current,
        &d,
        &split.train,
        &split.val,
        &quick(3),
        Some(resume),
        |_| Ok(()),
    )
    .unwrap();
    assert_eq!(resumed.params, whole.params);
    assert_eq!(resumed_rec.epochs, whole_rec.epochs);
}

#[test]
fn pruned_weights_stay_zero_through_a_checkpoint() {
    let d = toy(6, 1);
    let split = split_dataset(&d, &SplitSpec::with_seed(0)).unwrap();
    let cfg = quick(2);
    let steps = (cfg.max_epochs * cfg.steps_per_epoch(split.train.len())) as u64;
    let schedule = SparsitySchedule::over_steps(0.8, steps, 2).unwrap();
    let (model, masks, log) = prune_finetune(
        toy_model(&d, Variant::Full, 2),
        &d,
        &split.train,
        &schedule,
        &cfg,
    )
    .unwrap();
    assert_eq!(log.last().unwrap().sparsity, 0.8);

    let mut brute = 0;
    for (name, p) in model.params.iter() {
        match masks.get(name) {
            Some(m) if p.prunable => {
                let n = m.len();
                assert_eq!(
                    m.iter().filter(|k| !**k).count(),
                    (0.8 * n as f64).floor() as usize
                );
                for (v, keep) in p.value.data().iter().zip(m) {
                    if !keep {
                        assert_eq!(*v, 0.0, "{name}");
                    }
                }
                brute += m.iter().filter(|k| **k).count();
            }
            _ => brute += p.value.len(),
        }
    }
    assert_eq!(count_nnz(&model.params, &masks), brute);
    assert_eq!(log.last().unwrap().nnz, brute);

    let mut ck = model.to_checkpoint();
    ck.masks = masks.to_entries(&model.params).unwrap();
    let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
    let reloaded = Model::from_checkpoint(&back).unwrap();
    assert_eq!(reloaded.params, model.params);
    assert_eq!(MaskSet::from_entries(&back.masks).unwrap(), masks);
    assert!(back.count_nonzero() <= brute);
}
