//! The pretraining objective: mean squared reconstruction error restricted to
//! the loss-weight support and normalized by its area, plus the
//! foreground-confidence weighting variant.
//!
//! Per sample, with weights `w` over pixels `p` and channels `c`:
//!
//! ```text
//! loss = sum_p sum_c w(p) * (pred(c,p) - target(c,p))^2  /  (C * sum_p w(p))
//! ```
//!
//! The batch value is the unweighted mean of per-sample losses, so a sample
//! with a small support (e.g. after foreground weighting) counts as much as
//! one with a large support.

use ndarray::{Array3, ArrayView2, ArrayView3};
use thiserror::Error;

use crate::dataio::SegmentationConfidenceMap;
use crate::imaging::LossWeightMap;
use crate::nn::Scalar;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("prediction, target and weight shapes disagree: {0}")]
    ShapeMismatch(String),
    #[error("sample {sample} has an all-zero weight map (undefined normalization)")]
    EmptySupport { sample: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("foreground weighting produced an identically zero map; sample must be skipped")]
    DegenerateSupport,
}

/// Loss of one batch: the batch value, the per-sample values, and the summed
/// support area (total effective pixels).
#[derive(Debug, Clone)]
pub struct LossReport {
    pub value: f64,
    pub support_area: f64,
    pub per_sample: Vec<f64>,
}

/// Per-sample masked loss. `pred`/`target` are `(C, H, W)`, `weights` `(H, W)`.
pub fn sample_loss<T: Scalar>(
    pred: &ArrayView3<T>,
    target: &ArrayView3<T>,
    weights: &ArrayView2<T>,
    sample: usize,
) -> Result<T, LossError> {
    let (c, h, w) = pred.dim();
    if target.dim() != (c, h, w) || weights.dim() != (h, w) {
        return Err(LossError::ShapeMismatch(format!(
            "pred {:?}, target {:?}, weights {:?}",
            pred.dim(),
            target.dim(),
            weights.dim()
        )));
    }
    let mut num = T::zero();
    let mut wsum = T::zero();
    for y in 0..h {
        for x in 0..w {
            let wv = weights[(y, x)];
            wsum = wsum + wv;
            if wv > T::zero() {
                for ch in 0..c {
                    let d = pred[(ch, y, x)] - target[(ch, y, x)];
                    num = num + wv * d * d;
                }
            }
        }
    }
    if wsum <= T::zero() {
        return Err(LossError::EmptySupport { sample });
    }
    Ok(num / (T::from(c).unwrap() * wsum))
}

/// Gradient of `scale * sample_loss` with respect to `pred`. Zero wherever the
/// weight is zero. `scale` is typically `1 / batch_size` so that summing
/// per-sample gradients yields the gradient of the batch mean.
pub fn sample_loss_grad<T: Scalar>(
    pred: &ArrayView3<T>,
    target: &ArrayView3<T>,
    weights: &ArrayView2<T>,
    scale: T,
) -> Array3<T> {
    let (c, h, w) = pred.dim();
    let mut wsum = T::zero();
    for v in weights.iter() {
        wsum = wsum + *v;
    }
    let norm = T::from(2.0).unwrap() * scale / (T::from(c).unwrap() * wsum);
    let mut grad = Array3::zeros((c, h, w));
    for y in 0..h {
        for x in 0..w {
            let wv = weights[(y, x)];
            if wv > T::zero() {
                for ch in 0..c {
                    grad[(ch, y, x)] = norm * wv * (pred[(ch, y, x)] - target[(ch, y, x)]);
                }
            }
        }
    }
    grad
}

/// Batch masked reconstruction loss: per-sample normalization, unweighted
/// mean across samples. Errors if any sample has an empty support.
pub fn masked_reconstruction_loss<T: Scalar>(
    preds: &[ArrayView3<T>],
    targets: &[ArrayView3<T>],
    weights: &[ArrayView2<T>],
) -> Result<LossReport, LossError> {
    if preds.len() != targets.len() || preds.len() != weights.len() {
        return Err(LossError::ShapeMismatch(format!(
            "batch lengths: pred {}, target {}, weights {}",
            preds.len(),
            targets.len(),
            weights.len()
        )));
    }
    if preds.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let mut per_sample = Vec::with_capacity(preds.len());
    let mut support = 0.0f64;
    for i in 0..preds.len() {
        let l = sample_loss(&preds[i], &targets[i], &weights[i], i)?;
        per_sample.push(l.to_f64().unwrap());
        support += weights[i].iter().map(|v| v.to_f64().unwrap()).sum::<f64>();
    }
    let value = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok(LossReport { value, support_area: support, per_sample })
}

/// Pointwise product of loss weights and a foreground confidence map. The
/// loss's own normalization by the weight sum then compensates the reduced
/// prediction area automatically. A product that vanishes everywhere is an
/// error: such a sample carries no learning signal and must be skipped (and
/// counted) by the caller.
pub fn apply_foreground_weighting(
    weights: &LossWeightMap,
    conf: &SegmentationConfidenceMap,
) -> Result<LossWeightMap, LossError> {
    if weights.height() != conf.height() || weights.width() != conf.width() {
        return Err(LossError::ShapeMismatch(format!(
            "weights {}x{}, confidence {}x{}",
            weights.height(),
            weights.width(),
            conf.height(),
            conf.width()
        )));
    }
    let product = weights.data() * conf.values();
    if product.iter().all(|&v| v == 0.0) {
        return Err(LossError::DegenerateSupport);
    }
    Ok(LossWeightMap::from_array_unchecked(product))
}
