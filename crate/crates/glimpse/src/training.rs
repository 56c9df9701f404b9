//! The self-supervised pretraining loop: augmentation → masking → forward →
//! area-normalized masked loss → Adam step, with seeded reproducibility,
//! periodic checkpoints, lowest-loss checkpoint selection, and the
//! masking-ratio sweep harness.
//!
//! Determinism contract: a run is a pure function of (config, data). Per-batch
//! gradients are accumulated over fixed-size sample chunks whose results are
//! folded in a fixed order, so the same seed yields bitwise-identical loss
//! curves for any worker count.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, Array4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{
    crop_and_resize, crop_and_resize_map, filter_segmentable, sample_crop_rect, ConfidenceSet,
    CropParams, DataError, ImageSet,
};
use crate::imaging::{
    apply_plan, sample_patch_layout, AttentionSpec, ImageBuffer, ImagingError, LossWeightMap,
    MaskPlan, MaskStrategy,
};
use crate::model::{
    images_to_chunk, save_params, Autoencoder, CheckpointError, EncoderSpec, ModelError, CHUNK,
};
use crate::nn::{Adam, GradStore, Scratch};
use crate::objective::{self, LossError};
use crate::seed;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config snapshot: {0}")]
    Snapshot(String),
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("training data is empty")]
    EmptyData,
    #[error(
        "non-finite loss at epoch {epoch}, batch starting at sample {batch_start} (seed {seed}); \
         diagnostic snapshot written to {snapshot:?}"
    )]
    NonFiniteLoss { epoch: usize, batch_start: usize, seed: u64, snapshot: PathBuf },
    #[error("run directory {0} has no checkpoints")]
    NoCheckpoints(PathBuf),
}

/// How the covert-attention aperture is placed per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttentionPlacement {
    /// Use the center stored in the plan.
    #[default]
    Fixed,
    /// Uniform-random center inside the image bounds.
    UniformRandom,
    /// At the centroid of the foreground confidence map.
    ForegroundCentroid,
}

/// Full description of a pretraining run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub mask_plan: MaskPlan,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Crop-resize augmentation; `None` disables it.
    pub augmentation: Option<CropParams>,
    /// Multiply loss weights by foreground confidence maps; images rejected by
    /// the segmentability filter are excluded from pretraining.
    #[serde(default)]
    pub foreground_weighting: bool,
    #[serde(default)]
    pub attention_placement: AttentionPlacement,
    pub seed: u64,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub model: EncoderSpec,
}

fn default_checkpoint_every() -> usize {
    10
}

impl PretrainConfig {
    /// Paper-protocol defaults for a given plan (500 epochs, batch 512,
    /// weight decay 1e-8, crops on).
    pub fn paper_defaults(mask_plan: MaskPlan, learning_rate: f64, seed: u64) -> Self {
        Self {
            mask_plan,
            learning_rate,
            weight_decay: 1e-8,
            batch_size: 512,
            epochs: 500,
            augmentation: Some(CropParams::default()),
            foreground_weighting: false,
            attention_placement: AttentionPlacement::Fixed,
            seed,
            checkpoint_every: 10,
            model: EncoderSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::BadConfig("learning_rate must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(TrainError::BadConfig("weight_decay must be nonnegative".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(TrainError::BadConfig("batch_size and epochs must be positive".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(TrainError::BadConfig("checkpoint_every must be positive".into()));
        }
        if let Some(aug) = &self.augmentation {
            aug.validate()?;
            if aug.out_size != self.model.input_size {
                return Err(TrainError::BadConfig(format!(
                    "augmentation out_size {} != model input {}",
                    aug.out_size, self.model.input_size
                )));
            }
        }
        self.model.validate()?;
        Ok(())
    }

    /// FNV hash of the canonical TOML snapshot.
    pub fn config_hash(&self) -> u64 {
        let text = toml::to_string(self).unwrap_or_default();
        seed::hash_bytes(text.as_bytes())
    }
}

/// One persisted checkpoint: epoch, its epoch-mean pretraining loss, the blob
/// path, and the config hash it belongs to.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub path: PathBuf,
    pub config_hash: u64,
}

/// Run metadata written as `manifest.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: u64,
    pub code_version: String,
    pub seed: u64,
    pub wall_clock_secs: f64,
    pub skipped_degenerate_samples: usize,
    pub excluded_by_segmentability: usize,
    pub checkpoints: Vec<CheckpointRecord>,
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(dir.join("manifest.json"))?;
        serde_json::from_str(&text).map_err(|e| TrainError::Snapshot(e.to_string()))
    }

    /// Every artifact file listed must exist.
    pub fn verify(&self, dir: &Path) -> Result<(), TrainError> {
        for a in &self.artifacts {
            if !dir.join(a).exists() {
                return Err(TrainError::Snapshot(format!("missing artifact {a}")));
            }
        }
        Ok(())
    }
}

/// Result of a pretraining run.
#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub epoch_losses: Vec<f64>,
    pub checkpoints: Vec<CheckpointRecord>,
    pub skipped_degenerate_samples: usize,
}

/// One training example after augmentation and masking.
pub struct PreparedSample {
    pub input: ImageBuffer,
    pub target: ImageBuffer,
    pub weights: Array2<f32>,
}

/// Deterministically prepare the sample for `(epoch, dataset index)`:
/// optional crop-resize, then the mask plan, then optional foreground
/// weighting. Returns `None` when foreground weighting leaves no support.
pub fn prepare_sample(
    cfg: &PretrainConfig,
    data: &ImageSet,
    conf: Option<&ConfidenceSet>,
    epoch: usize,
    index: usize,
) -> Result<Option<PreparedSample>, TrainError> {
    let raw = data.get(index);
    let (base, conf_map) = match &cfg.augmentation {
        Some(aug) => {
            let mut rng = seed::rng(cfg.seed, "crop", &[epoch as u64, index as u64]);
            let rect = sample_crop_rect(raw.height(), raw.width(), aug, &mut rng)?;
            let img = crop_and_resize(&raw, rect, aug.out_size);
            let cmap = conf.map(|c| {
                crop_and_resize_map(c.get(index).values(), rect, aug.out_size)
            });
            (img, cmap)
        }
        None => (raw, conf.map(|c| c.get(index).values().clone())),
    };

    let mut plan = cfg
        .mask_plan
        .clone()
        .with_seed(seed::derive(cfg.seed, "mask", &[epoch as u64, index as u64]));
    if let Some(att) = plan.attention.as_mut() {
        match cfg.attention_placement {
            AttentionPlacement::Fixed => {}
            AttentionPlacement::UniformRandom => {
                use rand::Rng;
                let mut rng =
                    seed::rng(cfg.seed, "attention", &[epoch as u64, index as u64]);
                att.center = (
                    rng.random_range(0.0..base.height() as f64),
                    rng.random_range(0.0..base.width() as f64),
                );
            }
            AttentionPlacement::ForegroundCentroid => {
                let cmap = conf_map.as_ref().ok_or_else(|| {
                    TrainError::BadConfig(
                        "foreground_centroid placement requires confidence maps".into(),
                    )
                })?;
                att.center = centroid(cmap)
                    .unwrap_or((base.height() as f64 / 2.0, base.width() as f64 / 2.0));
            }
        }
    }

    let (input, weights) = apply_plan(&base, &plan)?;
    let weights = match (cfg.foreground_weighting, conf_map) {
        (true, Some(cmap)) => {
            let conf_map = crate::dataio::SegmentationConfidenceMap::from_values(cmap, index)?;
            match objective::apply_foreground_weighting(&weights, &conf_map) {
                Ok(w) => w,
                Err(LossError::DegenerateSupport) => return Ok(None),
                Err(e) => return Err(e.into()),
            }
        }
        (true, None) => {
            return Err(TrainError::BadConfig(
                "foreground_weighting requires confidence maps".into(),
            ))
        }
        (false, _) => weights,
    };
    Ok(Some(PreparedSample { input, target: base, weights: weights.into_array() }))
}

/// Weighted centroid of a confidence map, `None` if it carries no mass.
fn centroid(map: &Array2<f32>) -> Option<(f64, f64)> {
    let mut mass = 0.0f64;
    let mut my = 0.0f64;
    let mut mx = 0.0f64;
    for ((y, x), &v) in map.indexed_iter() {
        let v = v as f64;
        mass += v;
        my += v * (y as f64 + 0.5);
        mx += v * (x as f64 + 0.5);
    }
    (mass > 0.0).then(|| (my / mass, mx / mass))
}

/// Hash the pixel content of a prepared batch; used by the ablation-wiring
/// and foreground-invariance checks.
pub fn batch_input_hash(samples: &[PreparedSample]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for s in samples {
        let piece = seed::hash_f32s(s.input.data().iter().copied());
        for b in piece.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Number of chunks processed concurrently per wave; fixed so the reduction
/// order (and thus the arithmetic) never depends on the machine.
const WAVE: usize = 8;

struct ChunkResult {
    grads: GradStore<f32>,
    losses: Vec<f64>,
}

fn train_chunk(
    model: &Autoencoder<f32>,
    samples: &[PreparedSample],
    batch_divisor: usize,
) -> Result<ChunkResult, TrainError> {
    let mut scratch = Scratch::new();
    let inputs: Vec<ImageBuffer> = samples.iter().map(|s| s.input.clone()).collect();
    let x = images_to_chunk(&inputs);
    let (enc_tape, dec_tape) = model.forward_train(x, &mut scratch)?;
    let pred = dec_tape.output();

    let mut dpred = Array4::zeros(pred.dim());
    let mut losses = Vec::with_capacity(samples.len());
    let (c, _, h, w) = pred.dim();
    for (ni, s) in samples.iter().enumerate() {
        let p = ndarray::Array3::from_shape_fn((c, h, w), |(ch, y, x)| pred[(ch, ni, y, x)]);
        let weights = &s.weights;
        let loss = objective::sample_loss(&p.view(), &s.target.data().view(), &weights.view(), ni)?;
        losses.push(loss as f64);
        let g = objective::sample_loss_grad(
            &p.view(),
            &s.target.data().view(),
            &weights.view(),
            1.0 / batch_divisor as f32,
        );
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    dpred[(ch, ni, y, xx)] = g[(ch, y, xx)];
                }
            }
        }
    }

    let mut grads = model.grad_store();
    model.backward(&enc_tape, &dec_tape, dpred, &mut grads, &mut scratch);
    Ok(ChunkResult { grads, losses })
}

/// Run self-supervised pretraining, writing `config.snapshot`, `losses.csv`,
/// `checkpoints/epoch_{N}` (+ `.meta.json`), and `manifest.json` into
/// `out_dir`.
pub fn pretrain(
    cfg: &PretrainConfig,
    data: &ImageSet,
    conf: Option<&ConfidenceSet>,
    out_dir: &Path,
) -> Result<RunSummary, TrainError> {
    let started = Instant::now();
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyData);
    }
    if cfg.augmentation.is_none()
        && (data.height() != cfg.model.input_size || data.width() != cfg.model.input_size)
    {
        return Err(TrainError::BadConfig(format!(
            "without augmentation, data size {}x{} must match model input {}",
            data.height(),
            data.width(),
            cfg.model.input_size
        )));
    }

    // Materialize a fixed mask layout once per run when requested by an empty
    // placeholder (the re-randomization ablation).
    let mut cfg = cfg.clone();
    if cfg.mask_plan.fixed_layout.as_deref() == Some(&[]) {
        let probe_plan = cfg
            .mask_plan
            .clone()
            .with_seed(seed::derive(cfg.seed, "fixed-layout", &[]));
        let size = cfg.model.input_size;
        cfg.mask_plan.fixed_layout = Some(sample_patch_layout(&probe_plan, size, size)?);
    }
    let cfg = cfg;

    // Foreground weighting: drop images the segmentability filter rejects.
    let mut usable: Vec<usize> = (0..data.len()).collect();
    let mut excluded = 0usize;
    if cfg.foreground_weighting {
        let conf = conf.ok_or_else(|| {
            TrainError::BadConfig("foreground_weighting requires confidence maps".into())
        })?;
        if conf.len() < data.len() {
            return Err(TrainError::BadConfig(format!(
                "{} confidence maps for {} images",
                conf.len(),
                data.len()
            )));
        }
        let kept = filter_segmentable(conf);
        let in_range: Vec<usize> =
            kept.kept_indices.into_iter().filter(|&i| i < data.len()).collect();
        excluded = data.len() - in_range.len();
        usable = in_range;
        if usable.is_empty() {
            return Err(TrainError::EmptyData);
        }
    }

    std::fs::create_dir_all(out_dir)?;
    std::fs::create_dir_all(out_dir.join("checkpoints"))?;
    let snapshot =
        toml::to_string_pretty(&cfg).map_err(|e| TrainError::Snapshot(e.to_string()))?;
    std::fs::write(out_dir.join("config.snapshot"), &snapshot)?;

    let mut model = Autoencoder::<f32>::new(&cfg.model, seed::derive(cfg.seed, "model-init", &[]))?;
    let mut opt = Adam::<f32>::new(&model.adam_slot_sizes());
    let config_hash = cfg.config_hash();

    // Initial-state blob (epoch 0): not a selectable checkpoint, but needed
    // for decorrelation-at-initialization analyses.
    let init_path = out_dir.join("checkpoints").join("epoch_0");
    save_params(&model, &init_path)?;

    let mut losses_csv = String::from("epoch,mean_loss\n");
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut checkpoints = Vec::new();
    let mut skipped = 0usize;
    let lr = cfg.learning_rate as f32;
    let wd = cfg.weight_decay as f32;

    for epoch in 1..=cfg.epochs {
        let mut order = usable.clone();
        use rand::seq::SliceRandom;
        let mut rng = seed::rng(cfg.seed, "shuffle", &[epoch as u64]);
        order.shuffle(&mut rng);

        let mut epoch_loss_sum = 0.0f64;
        let mut epoch_samples = 0usize;

        for batch in order.chunks(cfg.batch_size) {
            let mut prepared = Vec::with_capacity(batch.len());
            for &idx in batch {
                match prepare_sample(&cfg, data, conf, epoch, idx)? {
                    Some(s) => prepared.push(s),
                    None => skipped += 1,
                }
            }
            if prepared.is_empty() {
                continue;
            }
            let divisor = prepared.len();
            let mut grads = model.grad_store();
            let mut batch_losses: Vec<f64> = Vec::with_capacity(divisor);

            let chunks: Vec<&[PreparedSample]> = prepared.chunks(CHUNK).collect();
            for wave in chunks.chunks(WAVE) {
                let results: Vec<Result<ChunkResult, TrainError>> = wave
                    .par_iter()
                    .map(|chunk| train_chunk(&model, chunk, divisor))
                    .collect();
                for r in results {
                    let r = r?;
                    grads.add_assign(&r.grads);
                    batch_losses.extend(r.losses);
                }
            }

            let batch_mean: f64 = batch_losses.iter().sum::<f64>() / divisor as f64;
            if !batch_mean.is_finite() {
                let snapshot = out_dir.join("diagnostic.json");
                let diag = serde_json::json!({
                    "epoch": epoch,
                    "batch_indices": batch,
                    "plan": format!("{:?}", cfg.mask_plan),
                    "seed": cfg.seed,
                    "losses": batch_losses,
                });
                std::fs::write(&snapshot, serde_json::to_string_pretty(&diag).unwrap())?;
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch_start: batch[0],
                    seed: cfg.seed,
                    snapshot,
                });
            }
            epoch_loss_sum += batch_losses.iter().sum::<f64>();
            epoch_samples += divisor;

            model.adam_step(&mut opt, &grads, lr, wd);
        }

        let mean = epoch_loss_sum / epoch_samples.max(1) as f64;
        epoch_losses.push(mean);
        // 8 significant digits, bit-exact ASCII
        losses_csv.push_str(&format!("{epoch},{mean:.7e}\n"));

        if epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs {
            let path = out_dir.join("checkpoints").join(format!("epoch_{epoch}"));
            save_params(&model, &path)?;
            let record = CheckpointRecord { epoch, mean_loss: mean, path: path.clone(), config_hash };
            let meta = serde_json::json!({
                "spec_hash": format!("{:016x}", seed::hash_bytes(
                    serde_json::to_string(&cfg.model).unwrap().as_bytes())),
                "seed": cfg.seed,
                "epoch": epoch,
                "pretraining_loss": mean,
                "config_path": "config.snapshot",
            });
            std::fs::write(
                out_dir.join("checkpoints").join(format!("epoch_{epoch}.meta.json")),
                serde_json::to_string_pretty(&meta).unwrap(),
            )?;
            checkpoints.push(record);
        }
    }

    std::fs::write(out_dir.join("losses.csv"), &losses_csv)?;

    let mut artifacts: Vec<String> =
        vec!["config.snapshot".into(), "losses.csv".into(), "checkpoints/epoch_0".into()];
    for c in &checkpoints {
        artifacts.push(format!("checkpoints/epoch_{}", c.epoch));
        artifacts.push(format!("checkpoints/epoch_{}.meta.json", c.epoch));
    }
    let manifest = RunManifest {
        config_hash,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        skipped_degenerate_samples: skipped,
        excluded_by_segmentability: excluded,
        checkpoints: checkpoints.clone(),
        artifacts,
    };
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(|e| TrainError::Snapshot(e.to_string()))?,
    )?;
    manifest.verify(out_dir)?;

    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        epoch_losses,
        checkpoints,
       skipped_degenerate_samples: skipped,
    })
}

/// The checkpoint with minimal epoch-mean pretraining loss; ties break to the
/// earliest epoch.
pub fn select_best_checkpoint(records: &[CheckpointRecord]) -> Option<&CheckpointRecord> {
    records.iter().min_by(|a, b| {
        a.mean_loss
            .partial_cmp(&b.mean_loss)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.epoch.cmp(&b.epoch))
    })
}

/// Load a run directory's manifest and select its best checkpoint.
pub fn select_best_checkpoint_in(run_dir: &Path) -> Result<CheckpointRecord, TrainError> {
    let manifest = RunManifest::load(run_dir)?;
    // Paths in the manifest may be relative to the run dir or absolute.
    let mut records = manifest.checkpoints;
    for r in &mut records {
        if !r.path.exists() {
            let rel = run_dir.join("checkpoints").join(format!("epoch_{}", r.epoch));
            if rel.exists() {
                r.path = rel;
            }
        }
    }
    select_best_checkpoint(&records)
        .cloned()
        .ok_or_else(|| TrainError::NoCheckpoints(run_dir.to_path_buf()))
}

/// Outcome of one sweep cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub probe_accuracy_mean: f64,
    pub probe_accuracy_std: f64,
    pub best_epoch: usize,
    pub run_dir: PathBuf,
}

/// Masking-ratio sweep: one pretraining + probing run per ratio with aligned
/// seeds. Returns the table sorted by ratio; the best row maximizes mean
/// probe accuracy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub best_ratio: f64,
}

impl SweepTable {
    pub fn save_csv(&self, path: &Path) -> Result<(), TrainError> {
        let mut out = String::from("ratio,probe_accuracy_mean,probe_accuracy_std,best_epoch\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:.2},{:.6},{:.6},{}\n",
                r.ratio, r.probe_accuracy_mean, r.probe_accuracy_std, r.best_epoch
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// The canonical 10–90% ratio grid.
pub fn ratio_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

pub struct SweepInputs<'a> {
    pub pretrain_data: &'a ImageSet,
    pub conf: Option<&'a ConfidenceSet>,
    pub probe_train: &'a ImageSet,
    pub probe_test: &'a ImageSet,
    pub probe_config: crate::evaluation::ProbeConfig,
}

/// Run the sweep. Each ratio gets `out_dir/ratio_{r}` as its run directory.
pub fn sweep_masking_ratio(
    base: &PretrainConfig,
    ratios: &[f64],
    inputs: &SweepInputs<'_>,
    out_dir: &Path,
) -> Result<SweepTable, TrainError> {
    let mut rows = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let mut cfg = base.clone();
        cfg.mask_plan.ratio = ratio;
        let run_dir = out_dir.join(format!("ratio_{:.2}", ratio));
        let summary = pretrain(&cfg, inputs.pretrain_data, inputs.conf, &run_dir)?;
        let best = select_best_checkpoint(&summary.checkpoints)
            .ok_or_else(|| TrainError::NoCheckpoints(run_dir.clone()))?;
        let model = crate::model::load_params(&best.path)?;
        let outcome = crate::evaluation::train_linear_probe(
            &model,
            inputs.probe_train,
            inputs.probe_test,
            &inputs.probe_config,
        )
        .map_err(|e| TrainError::BadConfig(format!("probe failed: {e}")))?;
        rows.push(SweepRow {
            ratio,
            probe_accuracy_mean: outcome.mean_accuracy,
            probe_accuracy_std: outcome.std_accuracy,
            best_epoch: best.epoch,
            run_dir,
        });
    }
    let best_ratio = rows
        .iter()
        .max_by(|a, b| {
            a.probe_accuracy_mean
                .partial_cmp(&b.probe_accuracy_mean)
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .map(|r| r.ratio)
        .unwrap_or(f64::NAN);
    let table = SweepTable { rows, best_ratio };
    table.save_csv(&out_dir.join("sweep.csv"))?;
    Ok(table)
}

/// Convenience: a peripheral plan whose covert-attention radius defaults to
/// the fovea radius implied by the ratio.
pub fn peripheral_plan_with_attention(ratio: f64, image_size: usize) -> MaskPlan {
    let mut plan = MaskPlan::new(MaskStrategy::MaskedPeriphery, ratio);
    let r = crate::imaging::circle_radius_for_masked_fraction(image_size, image_size, ratio);
    plan.attention = Some(AttentionSpec {
        center: (image_size as f64 / 2.0, image_size as f64 / 2.0),
        radius: r,
    });
    plan
}

/// Apply a plan the way evaluation does: per-index randomness derived from the
/// plan seed, optional attention placement.
pub fn eval_masked_view(
    plan: &MaskPlan,
    placement: AttentionPlacement,
    img: &ImageBuffer,
    conf_map: Option<&Array2<f32>>,
    index: usize,
) -> Result<(ImageBuffer, LossWeightMap), TrainError> {
    let mut plan = plan.clone().with_seed(seed::derive(plan.seed, "eval-mask", &[index as u64]));
    if let Some(att) = plan.attention.as_mut() {
        match placement {
            AttentionPlacement::Fixed => {}
            AttentionPlacement::UniformRandom => {
                use rand::Rng;
                let mut rng = seed::rng(plan.seed, "eval-attention", &[index as u64]);
                att.center = (
                    rng.random_range(0.0..img.height() as f64),
                    rng.random_range(0.0..img.width() as f64),
                );
            }
            AttentionPlacement::ForegroundCentroid => {
                let cmap = conf_map.ok_or_else(|| {
                    TrainError::BadConfig(
                        "foreground_centroid placement requires confidence maps".into(),
                    )
                })?;
                att.center =
                    centroid(cmap).unwrap_or((img.height() as f64 / 2.0, img.width() as f64 / 2.0));
            }
        }
    }
    Ok(apply_plan(img, &plan)?)
}

#[cfg(test)]
mod tests;
