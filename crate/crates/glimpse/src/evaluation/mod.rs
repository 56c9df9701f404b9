//! Representation-quality measurement: linear probing on the frozen encoder,
//! the pixel-probe and random-encoder baselines, latent decorrelation, and
//! masked reconstruction error.
//!
//! The decorrelation metric: z-score each latent feature across a batch of n
//! samples (sample standard deviation, so the covariance matrix C of Eq. 1
//! has unit diagonal), then sum the squared off-diagonal entries of
//! `C = Z^T Z / (n-1)` (Eq. 2). Computed through the n×n Gram identity
//! `c = ||Z Z^T||_F^2 / (n-1)^2 - d`, which never materializes the d×d
//! matrix (d is 18,432 for the default latent).

use ndarray::Array2;
use thiserror::Error;

use crate::blas::{gemm, Trans};
use crate::dataio::{ConfidenceSet, DataError, ImageSet};
use crate::imaging::MaskPlan;
use crate::model::{
    chunk_to_samples, images_to_chunk, Autoencoder, ModelError, ProbeHead, CHUNK,
};
use crate::nn::{Adam, Scratch};
use crate::objective::{self, LossError};
use crate::seed;
use crate::training::{eval_masked_view, AttentionPlacement, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least 2 samples for the covariance metric, got {0}")]
    TooFewSamples(usize),
    #[error("feature matrices disagree: {0}")]
    ShapeMismatch(String),
    #[error("encoder parameters changed during probing (checksum mismatch)")]
    EncoderDrift,
    #[error("probe data has no labels")]
    MissingLabels,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Linear-probe protocol parameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early stopping: epochs without a new minimum validation loss.
    pub patience: usize,
    /// Seeds for independently initialized probe runs.
    pub seeds: Vec<u64>,
    /// Train/val split seed (stratified 4000/1000 when the train set has the
    /// canonical 5000 images).
    pub split_seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-8,
            batch_size: 512,
            max_epochs: 100,
            patience: 10,
            seeds: vec![0, 1, 2, 3, 4],
            split_seed: 0,
        }
    }
}

/// Features plus labels for one split.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    /// `(n, d)`
    pub x: Array2<f32>,
    pub labels: Vec<u8>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.x.dim().0
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn dim(&self) -> usize {
        self.x.dim().1
    }

    pub fn subset(&self, idx: &[usize]) -> FeatureSet {
        let d = self.dim();
        let mut x = Array2::zeros((idx.len(), d));
        let mut labels = Vec::with_capacity(idx.len());
        for (row, &i) in idx.iter().enumerate() {
            x.row_mut(row).assign(&self.x.row(i));
            labels.push(self.labels[i]);
        }
        FeatureSet { x, labels }
    }
}

/// One seeded probe run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ProbeRun {
    pub seed: u64,
    pub test_accuracy: f64,
    pub best_val_loss: f64,
    pub best_epoch: usize,
}

/// Aggregate of the seeded probe runs.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ProbeOutcome {
    pub runs: Vec<ProbeRun>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

impl ProbeOutcome {
    fn from_runs(runs: Vec<ProbeRun>) -> Self {
        let n = runs.len() as f64;
        let mean = runs.iter().map(|r| r.test_accuracy).sum::<f64>() / n;
        let var = runs.iter().map(|r| (r.test_accuracy - mean).powi(2)).sum::<f64>() / n;
        Self { runs, mean_accuracy: mean, std_accuracy: var.sqrt() }
    }
}

/// Encode every image of a set (frozen encoder, inference mode) into a
/// flattened feature matrix `(n, latent_dim)`.
pub fn encode_features(model: &Autoencoder<f32>, set: &ImageSet) -> Result<Array2<f32>, EvalError> {
    let d = model.spec().latent_dim();
    let mut x = Array2::zeros((set.len(), d));
    let mut scratch = Scratch::new();
    let mut row = 0usize;
    let mut batch: Vec<crate::imaging::ImageBuffer> = Vec::with_capacity(CHUNK);
    for i in 0..set.len() {
        batch.push(set.get(i));
        if batch.len() == CHUNK || i + 1 == set.len() {
            let chunk = images_to_chunk(&batch);
            let z = model.encode_chunk(&chunk, &mut scratch)?;
            let (c, n, h, w) = z.dim();
            for ni in 0..n {
                let mut dst = x.row_mut(row);
                let mut k = 0usize;
                for ch in 0..c {
                    for y in 0..h {
                        for xx in 0..w {
                            dst[k] = z[(ch, ni, y, xx)];
                            k += 1;
                        }
                    }
                }
                row += 1;
            }
            batch.clear();
        }
    }
    Ok(x)
}

/// Flatten raw pixels into features (the identity encoder).
pub fn pixel_features(set: &ImageSet) -> Array2<f32> {
    let d = set.channels() * set.height() * set.width();
    let mut x = Array2::zeros((set.len(), d));
    for i in 0..set.len() {
        let img = set.get(i);
        let mut dst = x.row_mut(i);
        for (k, &v) in img.data().iter().enumerate() {
            dst[k] = v;
        }
    }
    x
}

fn require_labels(set: &ImageSet) -> Result<Vec<u8>, EvalError> {
    set.labels().map(|l| l.to_vec()).ok_or(EvalError::MissingLabels)
}

/// Stratified train/val split of the feature set when it has the canonical
/// 5000 images; otherwise an 80/20 split by shuffled index.
fn split_features(
    features: FeatureSet,
    set: &ImageSet,
    split_seed: u64,
) -> Result<(FeatureSet, FeatureSet), EvalError> {
    if set.len() == 5000 {
        let (train_idx, val_idx) = crate::dataio::split_train_val(set, split_seed)?;
        return Ok((features.subset(&train_idx), features.subset(&val_idx)));
    }
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..features.len()).collect();
    let mut rng = seed::rng(split_seed, "probe-split", &[]);
    idx.shuffle(&mut rng);
    let val_n = (features.len() / 5).max(1);
    let (val_idx, train_idx) = idx.split_at(val_n);
    let mut t = train_idx.to_vec();
    let mut v = val_idx.to_vec();
    t.sort_unstable();
    v.sort_unstable();
    Ok((features.subset(&t), features.subset(&v)))
}

/// Train one linear head on precomputed features with early stopping at the
/// minimum validation loss; returns the test accuracy.
pub fn train_probe_on_features(
    train: &FeatureSet,
    val: &FeatureSet,
    test: &FeatureSet,
    cfg: &ProbeConfig,
    run_seed: u64,
) -> ProbeRun {
    let d = train.dim();
    let classes = crate::synth::CLASSES.max(
        *train.labels.iter().max().unwrap_or(&9) as usize + 1,
    );
    let mut head = ProbeHead::init(d, classes, seed::derive(run_seed, "probe-head", &[]));
    let mut opt = Adam::<f32>::new(&[head.w.len(), head.b.len()]);
    let lr = cfg.learning_rate as f32;
    let wd = cfg.weight_decay as f32;

    let mut best = head.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;

    for epoch in 1..=cfg.max_epochs {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = seed::rng(run_seed, "probe-shuffle", &[epoch as u64]);
        order.shuffle(&mut rng);

        for batch in order.chunks(cfg.batch_size) {
            let xb = train.subset(batch);
            let logits = head.batch_logits(&xb.x);
            let (_, dlogits) = cross_entropy(&logits, &xb.labels);
            // dW = dlogits^T X, db = column sums
            let (n, k) = dlogits.dim();
            let mut dw = Array2::<f32>::zeros((k, d));
            gemm(
                Trans::Yes,
                Trans::No,
                k,
                d,
                n,
                1.0f32,
                dlogits.as_slice().unwrap(),
                xb.x.as_slice().unwrap(),
                0.0,
                dw.as_slice_mut().unwrap(),
            );
            let mut db = Array2::<f32>::zeros((1, k));
            for row in dlogits.outer_iter() {
                for (j, v) in row.iter().enumerate() {
                    db[(0, j)] += *v;
                }
            }
            opt.begin_step();
            opt.update(0, head.w.as_slice_mut().unwrap(), dw.as_slice().unwrap(), lr, wd);
            opt.update(1, head.b.as_slice_mut().unwrap(), db.as_slice().unwrap(), lr, wd);
        }

        let val_logits = head.batch_logits(&val.x);
        let (val_loss, _) = cross_entropy(&val_logits, &val.labels);
        if val_loss < best_val {
            best_val = val_loss;
            best = head.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    let test_logits = best.batch_logits(&test.x);
    let acc = accuracy(&test_logits, &test.labels);
    ProbeRun { seed: run_seed, test_accuracy: acc, best_val_loss: best_val, best_epoch }
}

/// Mean cross-entropy and its gradient w.r.t. the logits (softmax − one-hot,
/// scaled by 1/n).
pub fn cross_entropy(logits: &Array2<f32>, labels: &[u8]) -> (f64, Array2<f32>) {
    let (n, k) = logits.dim();
    assert_eq!(n, labels.len());
    let mut grad = Array2::zeros((n, k));
    let mut loss = 0.0f64;
    for i in 0..n {
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut denom = 0.0f64;
        for &v in row.iter() {
            denom += ((v - m) as f64).exp();
        }
        let y = labels[i] as usize;
        let logp_y = (row[y] - m) as f64 - denom.ln();
        loss -= logp_y;
        for j in 0..k {
            let p = (((row[j] - m) as f64).exp() / denom) as f32;
            grad[(i, j)] = (p - if j == y { 1.0 } else { 0.0 }) / n as f32;
        }
    }
    (loss / n as f64, grad)
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(logits: &Array2<f32>, labels: &[u8]) -> f64 {
    let n = logits.dim().0;
    let mut correct = 0usize;
    for i in 0..n {
        let row = logits.row(i);
        let mut arg = 0usize;
        let mut best = f32::NEG_INFINITY;
        for (j, &v) in row.iter().enumerate() {
            if v > best {
                best = v;
                arg = j;
            }
        }
        if arg == labels[i] as usize {
            correct += 1;
        }
    }
    correct as f64 / n as f64
}

/// Full linear-probe protocol on a frozen encoder: encode features once,
/// stratified train/val split, one head per seed, mean ± std of test
/// accuracy. The encoder checksum is verified unchanged afterwards.
pub fn train_linear_probe(
    model: &Autoencoder<f32>,
    train_set: &ImageSet,
    test_set: &ImageSet,
    cfg: &ProbeConfig,
) -> Result<ProbeOutcome, EvalError> {
    let checksum_before = model.encoder_checksum();

    let train_features =
        FeatureSet { x: encode_features(model, train_set)?, labels: require_labels(train_set)? };
    let test =
        FeatureSet { x: encode_features(model, test_set)?, labels: require_labels(test_set)? };
    let (train, val) = split_features(train_features, train_set, cfg.split_seed)?;

    let runs: Vec<ProbeRun> = cfg
        .seeds
        .iter()
        .map(|&s| train_probe_on_features(&train, &val, &test, cfg, s))
        .collect();

    if model.encoder_checksum() != checksum_before {
        return Err(EvalError::EncoderDrift);
    }
    Ok(ProbeOutcome::from_runs(runs))
}

/// Same protocol with the identity encoder: linear probing directly on the
/// flattened input pixels.
pub fn pixel_probe_baseline(
    train_set: &ImageSet,
    test_set: &ImageSet,
    cfg: &ProbeConfig,
) -> Result<ProbeOutcome, EvalError> {
    let train_features =
        FeatureSet { x: pixel_features(train_set), labels: require_labels(train_set)? };
    let test = FeatureSet { x: pixel_features(test_set), labels: require_labels(test_set)? };
    let (train, val) = split_features(train_features, train_set, cfg.split_seed)?;
    let runs: Vec<ProbeRun> = cfg
        .seeds
        .iter()
        .map(|&s| train_probe_on_features(&train, &val, &test, cfg, s))
        .collect();
    Ok(ProbeOutcome::from_runs(runs))
}

/// Result of the covariance metric.
#[derive(Debug, Clone, Copy)]
pub struct CovarianceReport {
    /// Sum of squared off-diagonal correlation entries.
    pub value: f64,
    /// Features dropped for having (numerically) zero variance.
    pub dropped_features: usize,
}

/// Sum of squared off-diagonal entries of the feature covariance matrix of
/// z-scored representations, via the Gram identity. `rows` is `(n, d)`.
pub fn covariance_offdiagonal(rows: &Array2<f64>) -> Result<CovarianceReport, EvalError> {
    let (n, d) = rows.dim();
    if n < 2 {
        return Err(EvalError::TooFewSamples(n));
    }
    // z-score columns with the sample (n-1) standard deviation; drop
    // zero-variance features rather than divide by ~0.
    let nf = n as f64;
    let mut kept_cols = Vec::with_capacity(d);
    let mut means = Vec::with_capacity(d);
    let mut inv_stds = Vec::with_capacity(d);
    for j in 0..d {
        let col = rows.column(j);
        let mean = col.sum() / nf;
        let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
        let std = var.sqrt();
        if std > 1e-12 {
            kept_cols.push(j);
            means.push(mean);
            inv_stds.push(1.0 / std);
        }
    }
    let dk = kept_cols.len();
    let dropped = d - dk;
    if dk == 0 {
        return Ok(CovarianceReport { value: 0.0, dropped_features: dropped });
    }

    let mut z = Array2::<f64>::zeros((n, dk));
    for (jj, &j) in kept_cols.iter().enumerate() {
        for i in 0..n {
            z[(i, jj)] = (rows[(i, j)] - means[jj]) * inv_stds[jj];
        }
    }

    // ||Z^T Z||_F^2 == ||Z Z^T||_F^2; the right side is n×n.
    let mut gram = Array2::<f64>::zeros((n, n));
    gemm(
        Trans::No,
        Trans::Yes,
        n,
        n,
        dk,
        1.0f64,
        z.as_slice().unwrap(),
        z.as_slice().unwrap(),
        0.0,
        gram.as_slice_mut().unwrap(),
    );
    let fro2: f64 = gram.iter().map(|&v| v * v).sum();
    let c = fro2 / ((nf - 1.0) * (nf - 1.0)) - dk as f64;
    Ok(CovarianceReport { value: c.max(0.0), dropped_features: dropped })
}

/// Independent dense route for verification: materializes the d×d covariance
/// of z-scored features and sums the squared off-diagonal entries directly.
/// Only sensible for small d.
pub fn covariance_offdiag_dense_oracle(rows: &Array2<f64>) -> Result<f64, EvalError> {
    let (n, d) = rows.dim();
    if n < 2 {
        return Err(EvalError::TooFewSamples(n));
    }
    let nf = n as f64;
    let mut z_cols: Vec<Vec<f64>> = Vec::new();
    for j in 0..d {
        let col: Vec<f64> = rows.column(j).to_vec();
        let mean = col.iter().sum::<f64>() / nf;
        let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
        let std = var.sqrt();
        if std > 1e-12 {
            z_cols.push(col.iter().map(|&v| (v - mean) / std).collect());
        }
    }
    let dk = z_cols.len();
    let mut c = 0.0f64;
    for i in 0..dk {
        for j in 0..dk {
            if i == j {
                continue;
            }
            let cij = z_cols[i]
                .iter()
                .zip(z_cols[j].iter())
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / (nf - 1.0);
            c += cij * cij;
        }
    }
    Ok(c)
}

/// Covariance metric for an encoder on one mini-batch of images: flattened
/// latents, promoted to f64.
pub fn covariance_of_encoder(
    model: &Autoencoder<f32>,
    set: &ImageSet,
    indices: &[usize],
) -> Result<CovarianceReport, EvalError> {
    let subset = set.subset(indices);
    let feats = encode_features(model, &subset)?;
    let rows = feats.mapv(|v| v as f64);
    covariance_offdiagonal(&rows)
}

/// Mean masked reconstruction error of a model over an evaluation set under a
/// mask plan. With `foreground_only`, loss weights are multiplied by the
/// confidence maps (degenerate samples are skipped). Returns the mean of
/// per-sample normalized losses.
pub fn reconstruction_error(
    model: &Autoencoder<f32>,
    set: &ImageSet,
    plan: &MaskPlan,
    placement: AttentionPlacement,
    foreground: Option<&ConfidenceSet>,
) -> Result<f64, EvalError> {
    let mut scratch = Scratch::new();
    let mut losses: Vec<f64> = Vec::with_capacity(set.len());
    let mut batch_inputs: Vec<crate::imaging::ImageBuffer> = Vec::with_capacity(CHUNK);
    let mut batch_targets: Vec<crate::imaging::ImageBuffer> = Vec::with_capacity(CHUNK);
    let mut batch_weights: Vec<Array2<f32>> = Vec::with_capacity(CHUNK);

    let flush = |inputs: &mut Vec<crate::imaging::ImageBuffer>,
                     targets: &mut Vec<crate::imaging::ImageBuffer>,
                     weights: &mut Vec<Array2<f32>>,
                     losses: &mut Vec<f64>,
                     scratch: &mut Scratch<f32>|
     -> Result<(), EvalError> {
        if inputs.is_empty() {
            return Ok(());
        }
        let x = images_to_chunk(inputs);
        let z = model.encode_chunk(&x, scratch)?;
        let pred = model.decode_chunk(&z, scratch);
        for (ni, sample) in chunk_to_samples(&pred).into_iter().enumerate() {
            let loss = objective::sample_loss(
                &sample.view(),
                &targets[ni].data().view(),
                &weights[ni].view(),
                ni,
            )?;
            losses.push(loss as f64);
        }
        inputs.clear();
        targets.clear();
        weights.clear();
        Ok(())
    };

    for i in 0..set.len() {
        let img = set.get(i);
        let conf_map = foreground.map(|c| c.get(i).values().clone());
        let (masked, wmap) = eval_masked_view(plan, placement, &img, conf_map.as_ref(), i)?;
        let weights = match (&conf_map, foreground.is_some()) {
            (Some(cmap), true) => {
                let conf =
                    crate::dataio::SegmentationConfidenceMap::from_values(cmap.clone(), i)?;
                match objective::apply_foreground_weighting(&wmap, &conf) {
                    Ok(w) => w.data().clone(),
                    Err(LossError::DegenerateSupport) => continue,
                    Err(e) => return Err(e.into()),
                }
            }
            _ => wmap.data().clone(),
        };
        batch_inputs.push(masked);
        batch_targets.push(img);
        batch_weights.push(weights);
        if batch_inputs.len() == CHUNK {
            flush(&mut batch_inputs, &mut batch_targets, &mut batch_weights, &mut losses, &mut scratch)?;
        }
    }
    flush(&mut batch_inputs, &mut batch_targets, &mut batch_weights, &mut losses, &mut scratch)?;

    if losses.is_empty() {
        return Err(EvalError::TooFewSamples(0));
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}
