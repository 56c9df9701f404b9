use super::*;
use crate::imaging::MaskStrategy;
use crate::synth::{self, SynthSpec};

fn tiny_config(strategy: MaskStrategy, ratio: f64, seed_val: u64) -> PretrainConfig {
    PretrainConfig {
        mask_plan: MaskPlan::new(strategy, ratio),
        learning_rate: 1e-3,
        weight_decay: 1e-8,
        batch_size: 8,
        epochs: 2,
        augmentation: None,
        foreground_weighting: false,
        attention_placement: AttentionPlacement::Fixed,
        seed: seed_val,
        checkpoint_every: 1,
        model: EncoderSpec { input_size: 16, input_channels: 3, base_channels: 4, blocks_per_stage: 1 },
    }
}

fn tiny_data(n: usize) -> (ImageSet, ConfidenceSet) {
    let spec = SynthSpec { size: 16, ..Default::default() };
    synth::generate_unlabeled(&spec, n, 0)
}

#[test]
fn pretrain_writes_the_run_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = tiny_data(16);
    let cfg = tiny_config(MaskStrategy::MaskedPeriphery, 0.8, 1);
    let summary = pretrain(&cfg, &data, None, dir.path()).unwrap();

    assert!(dir.path().join("config.snapshot").exists());
    assert!(dir.path().join("losses.csv").exists());
    assert!(dir.path().join("manifest.json").exists());
    assert!(dir.path().join("checkpoints/epoch_0").exists());
    assert!(dir.path().join("checkpoints/epoch_1").exists());
    assert!(dir.path().join("checkpoints/epoch_2").exists());
    assert!(dir.path().join("checkpoints/epoch_2.meta.json").exists());
    assert_eq!(summary.epoch_losses.len(), 2);
    assert_eq!(summary.checkpoints.len(), 2);

    let manifest = RunManifest::load(dir.path()).unwrap();
    manifest.verify(dir.path()).unwrap();
    assert_eq!(manifest.seed, 1);

    // the snapshot replays into an identical config
    let snap: PretrainConfig =
        toml::from_str(&std::fs::read_to_string(dir.path().join("config.snapshot")).unwrap())
            .unwrap();
    assert_eq!(snap.seed, cfg.seed);
    assert_eq!(snap.mask_plan.ratio, cfg.mask_plan.ratio);
}

#[test]
fn same_seed_reproduces_the_loss_curve_bitwise() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let (data, _) = tiny_data(12);
    let cfg = tiny_config(MaskStrategy::RandomPatches, 0.5, 7);
    let a = pretrain(&cfg, &data, None, dir_a.path()).unwrap();
    let b = pretrain(&cfg, &data, None, dir_b.path()).unwrap();
    assert_eq!(a.epoch_losses, b.epoch_losses);
    let csv_a = std::fs::read_to_string(dir_a.path().join("losses.csv")).unwrap();
    let csv_b = std::fs::read_to_string(dir_b.path().join("losses.csv")).unwrap();
    assert_eq!(csv_a, csv_b);

    let dir_c = tempfile::tempdir().unwrap();
    let mut other = cfg.clone();
    other.seed = 8;
    let c = pretrain(&other, &data, None, dir_c.path()).unwrap();
    assert_ne!(a.epoch_losses, c.epoch_losses);
}

#[test]
fn loss_decreases_on_a_tiny_run() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = tiny_data(16);
    let mut cfg = tiny_config(MaskStrategy::MaskedPeriphery, 0.7, 3);
    cfg.epochs = 6;
    cfg.checkpoint_every = 3;
    let summary = pretrain(&cfg, &data, None, dir.path()).unwrap();
    let first = summary.epoch_losses[0];
    let last = *summary.epoch_losses.last().unwrap();
    assert!(last < first, "loss did not decrease: {first} -> {last}");
}

#[test]
fn ablation_wiring_fixed_layout_and_no_augmentation() {
    // with augmentation off and a fixed layout, the network sees the identical
    // (image, mask) pair in every epoch
    let (data, _) = tiny_data(8);
    let mut cfg = tiny_config(MaskStrategy::RandomPatches, 0.5, 9);
    cfg.mask_plan.patch_size = 4;
    cfg.mask_plan.fixed_layout =
        Some(sample_patch_layout(&cfg.mask_plan.clone().with_seed(42), 16, 16).unwrap());

    let batch: Vec<usize> = (0..8).collect();
    let mut hashes = Vec::new();
    for epoch in 1..=3 {
        let prepared: Vec<PreparedSample> = batch
            .iter()
            .map(|&i| prepare_sample(&cfg, &data, None, epoch, i).unwrap().unwrap())
            .collect();
        hashes.push(batch_input_hash(&prepared));
    }
    assert_eq!(hashes[0], hashes[1]);
    assert_eq!(hashes[1], hashes[2]);

    // with re-randomized masks the inputs differ across epochs
    let mut cfg2 = cfg.clone();
    cfg2.mask_plan.fixed_layout = None;
    let h1 = batch_input_hash(
        &batch
            .iter()
            .map(|&i| prepare_sample(&cfg2, &data, None, 1, i).unwrap().unwrap())
            .collect::<Vec<_>>(),
    );
    let h2 = batch_input_hash(
        &batch
            .iter()
            .map(|&i| prepare_sample(&cfg2, &data, None, 2, i).unwrap().unwrap())
            .collect::<Vec<_>>(),
    );
    assert_ne!(h1, h2);
}

#[test]
fn empty_fixed_layout_placeholder_is_materialized_once() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = tiny_data(8);
    let mut cfg = tiny_config(MaskStrategy::RandomPatches, 0.5, 4);
    cfg.mask_plan.patch_size = 4;
    cfg.mask_plan.fixed_layout = Some(vec![]);
    cfg.epochs = 1;
    pretrain(&cfg, &data, None, dir.path()).unwrap();
    let snap: PretrainConfig =
        toml::from_str(&std::fs::read_to_string(dir.path().join("config.snapshot")).unwrap())
            .unwrap();
    let layout = snap.mask_plan.fixed_layout.unwrap();
    let expected = (16 / 4) * (16 / 4); // 16 patches, ratio 0.5 -> 8
    assert_eq!(layout.len(), expected / 2);
}

#[test]
fn foreground_weighting_changes_weights_not_inputs() {
    let (data, conf) = tiny_data(8);
    let cfg_plain = tiny_config(MaskStrategy::MaskedPeriphery, 0.7, 5);
    let mut cfg_fg = cfg_plain.clone();
    cfg_fg.foreground_weighting = true;

    for i in 0..8 {
        let a = prepare_sample(&cfg_plain, &data, Some(&conf), 1, i).unwrap().unwrap();
        let b = prepare_sample(&cfg_fg, &data, Some(&conf), 1, i).unwrap().unwrap();
        assert_eq!(a.input, b.input, "inputs must not depend on weighting");
        assert_eq!(a.target, b.target);
        assert_ne!(a.weights, b.weights, "weights must reflect the confidence map");
    }
}

#[test]
fn foreground_weighting_requires_confidence() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = tiny_data(8);
    let mut cfg = tiny_config(MaskStrategy::MaskedPeriphery, 0.7, 5);
    cfg.foreground_weighting = true;
    assert!(matches!(
        pretrain(&cfg, &data, None, dir.path()),
        Err(TrainError::BadConfig(_))
    ));
}

#[test]
fn select_best_checkpoint_rules() {
    let rec = |epoch: usize, loss: f64| CheckpointRecord {
        epoch,
        mean_loss: loss,
        path: PathBuf::from(format!("epoch_{epoch}")),
        config_hash: 0,
    };
    // monotone decreasing -> last
    let r = [rec(1, 0.5), rec(2, 0.4), rec(3, 0.3)];
    assert_eq!(select_best_checkpoint(&r).unwrap().epoch, 3);
    // dip in the middle -> epoch 2
    let r = [rec(1, 0.5), rec(2, 0.3), rec(3, 0.4)];
    assert_eq!(select_best_checkpoint(&r).unwrap().epoch, 2);
    // tie -> earliest
    let r = [rec(1, 0.3), rec(2, 0.3)];
    assert_eq!(select_best_checkpoint(&r).unwrap().epoch, 1);
    assert!(select_best_checkpoint(&[]).is_none());
}

#[test]
fn autoencoding_baseline_uses_full_support() {
    let (data, _) = tiny_data(4);
    let cfg = tiny_config(MaskStrategy::None, 0.0, 2);
    let s = prepare_sample(&cfg, &data, None, 1, 0).unwrap().unwrap();
    assert_eq!(s.input, s.target);
    assert_eq!(s.weights.iter().filter(|&&v| v == 1.0).count(), 16 * 16);
}

#[test]
fn covert_attention_placements_are_deterministic_and_distinct() {
    let (data, conf) = tiny_data(4);
    let mut cfg = tiny_config(MaskStrategy::MaskedPeriphery, 0.8, 6);
    cfg.mask_plan = peripheral_plan_with_attention(0.8, 16);
    cfg.attention_placement = AttentionPlacement::UniformRandom;
    let a = prepare_sample(&cfg, &data, Some(&conf), 1, 0).unwrap().unwrap();
    let b = prepare_sample(&cfg, &data, Some(&conf), 1, 0).unwrap().unwrap();
    assert_eq!(a.input, b.input);

    cfg.attention_placement = AttentionPlacement::ForegroundCentroid;
    let c = prepare_sample(&cfg, &data, Some(&conf), 1, 0).unwrap().unwrap();
    // same image, different aperture placement policy -> different view
    assert_ne!(a.input, c.input);
}

#[test]
fn sweep_produces_one_row_per_ratio_with_accuracies_in_range() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { size: 16, ..Default::default() };
    let (pretrain_data, _) = synth::generate_unlabeled(&spec, 8, 0);
    let (probe_train, _) = synth::generate(&spec, 40, 100);
    let (probe_test, _) = synth::generate(&spec, 20, 900);

    let mut base = tiny_config(MaskStrategy::RandomPatches, 0.5, 10);
    base.mask_plan.patch_size = 4;
    base.epochs = 1;
    let probe_config = crate::evaluation::ProbeConfig {
        max_epochs: 2,
        seeds: vec![0],
        ..Default::default()
    };
    let inputs = SweepInputs {
        pretrain_data: &pretrain_data,
        conf: None,
        probe_train: &probe_train,
        probe_test: &probe_test,
        probe_config,
    };
    let table = sweep_masking_ratio(&base, &[0.3, 0.6], &inputs, dir.path()).unwrap();
    assert_eq!(table.rows.len(), 2);
    for row in &table.rows {
        assert!((0.0..=1.0).contains(&row.probe_accuracy_mean));
    }
    assert!(dir.path().join("sweep.csv").exists());
    assert!(table.best_ratio == 0.3 || table.best_ratio == 0.6);
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = tiny_data(8);
    let mut cfg = tiny_config(MaskStrategy::MaskedPeriphery, 0.8, 11);
    cfg.learning_rate = 1e18; // guaranteed blow-up
    cfg.epochs = 30;
    let err = pretrain(&cfg, &data, None, dir.path());
    match err {
        Err(TrainError::NonFiniteLoss { snapshot, .. }) => {
            assert!(snapshot.exists());
        }
        other => panic!("expected NonFiniteLoss, got {other:?}"),
    }
}
