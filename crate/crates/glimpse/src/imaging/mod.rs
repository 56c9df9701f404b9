//! Masking transforms: partial views of an image plus the loss-weight map
//! that defines the pretraining target region.
//!
//! Every strategy consumes an [`ImageBuffer`] and a [`MaskPlan`] and produces
//! the transformed image together with a [`LossWeightMap`]: weight 1 where the
//! reconstruction error counts (the hidden or degraded region), 0 where the
//! encoder saw the pixel unaltered. All operations are pure functions of
//! `(input, plan)` — the plan carries its own randomness seed — so they are
//! safe to run from any number of workers and reproduce bitwise.

mod blur;

pub use blur::gaussian_blur;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("image dimensions must be strictly positive")]
    EmptyImage,
    #[error("pixel value {0} outside [0,1]")]
    ValueOutOfRange(f32),
    #[error("mask ratio {0} outside [0,1]")]
    RatioOutOfRange(f64),
    #[error("patch size {patch} does not tile a {h}x{w} image")]
    PatchGridMismatch { h: usize, w: usize, patch: usize },
    #[error("operation requires strategy {expected:?}, plan has {got:?}")]
    WrongStrategy { expected: MaskStrategy, got: MaskStrategy },
    #[error("blur sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("plan has no blur sigma but the strategy blurs")]
    MissingSigma,
    #[error("plan has no attention aperture")]
    MissingAttention,
    #[error("attention radius must be positive, got {0}")]
    NonPositiveAttentionRadius(f64),
    #[error("attention circle lies entirely outside the image")]
    AttentionOutsideImage,
    #[error("fixation center ({0}, {1}) outside image bounds")]
    FixationOutsideImage(f64, f64),
    #[error("fovea radius must be positive, got {0}")]
    NonPositiveFoveaRadius(f64),
    #[error("fixed layout references patch {index} but the grid has {count} patches")]
    BadFixedLayout { index: usize, count: usize },
}

/// An H×W×C image with float intensities in `[0,1]`, stored channel-major
/// `(C, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    data: Array3<f32>,
}

impl ImageBuffer {
    /// Validating constructor; rejects empty shapes and out-of-range values.
    pub fn from_array(data: Array3<f32>) -> Result<Self, ImagingError> {
        let (c, h, w) = data.dim();
        if c == 0 || h == 0 || w == 0 {
            return Err(ImagingError::EmptyImage);
        }
        for &v in data.iter() {
            if !(0.0..=1.0).contains(&v) {
                return Err(ImagingError::ValueOutOfRange(v));
            }
        }
        Ok(Self { data })
    }

    /// Zero-filled image.
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { data: Array3::zeros((channels, height, width)) }
    }

    /// Build from a closure `(c, y, x) -> value`; panics if a value leaves `[0,1]`.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let data = Array3::from_shape_fn((channels, height, width), |(c, y, x)| {
            let v = f(c, y, x);
            assert!((0.0..=1.0).contains(&v), "value {v} outside [0,1]");
            v
        });
        Self { data }
    }

    pub(crate) fn from_array_unchecked(data: Array3<f32>) -> Self {
        Self { data }
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }
    pub fn height(&self) -> usize {
        self.data.dim().1
    }
    pub fn width(&self) -> usize {
        self.data.dim().2
    }
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c, y, x)]
    }
    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }
    pub fn into_array(self) -> Array3<f32> {
        self.data
    }
}

/// Per-pixel weights in `[0,1]` selecting where reconstruction error counts.
/// Opaque strategies produce binary maps; foreground weighting scales them.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeightMap {
    data: Array2<f32>,
}

impl LossWeightMap {
    pub fn from_array(data: Array2<f32>) -> Result<Self, ImagingError> {
        let (h, w) = data.dim();
        if h == 0 || w == 0 {
            return Err(ImagingError::EmptyImage);
        }
        for &v in data.iter() {
            if !(0.0..=1.0).contains(&v) {
                return Err(ImagingError::ValueOutOfRange(v));
            }
        }
        Ok(Self { data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { data: Array2::zeros((height, width)) }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self { data: Array2::from_elem((height, width), 1.0) }
    }

    pub(crate) fn from_array_unchecked(data: Array2<f32>) -> Self {
        Self { data }
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }
    pub fn width(&self) -> usize {
        self.data.dim().1
    }
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[(y, x)]
    }
    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }
    pub fn into_array(self) -> Array2<f32> {
        self.data
    }

    /// Sum of weights (effective loss-support area in pixels).
    pub fn support_area(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    /// Mean weight = covered area fraction.
    pub fn area_fraction(&self) -> f64 {
        self.support_area() / (self.height() * self.width()) as f64
    }
}

/// Masking strategies of the pretraining task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStrategy {
    RandomPatches,
    MaskedPeriphery,
    BlurryPatches,
    BlurryPeriphery,
    FovealFilter,
    None,
}

impl MaskStrategy {
    pub fn is_blurry(self) -> bool {
        matches!(self, MaskStrategy::BlurryPatches | MaskStrategy::BlurryPeriphery)
    }
}

/// A second circular full-resolution aperture (covert attention) on top of a
/// peripheral mask. `center` is `(row, col)` in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionSpec {
    pub center: (f64, f64),
    pub radius: f64,
}

/// Fixation point for the foveal filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixationSpec {
    /// `(row, col)` in pixel coordinates.
    pub center: (f64, f64),
    pub fovea_radius: f64,
}

/// Declarative description of a masking strategy: geometry, ratio, and
/// randomness source. Applying the same plan to the same image is bitwise
/// reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskPlan {
    pub strategy: MaskStrategy,
    /// Fraction of image area masked or blurred.
    pub ratio: f64,
    /// Patch edge length for patch strategies.
    #[serde(default = "default_patch_size")]
    pub patch_size: usize,
    /// Persisted patch layout reused on every call (ablation of mask
    /// re-randomization). Indices into the row-major patch grid.
    #[serde(default)]
    pub fixed_layout: Option<Vec<usize>>,
    /// Gaussian sigma for blurry variants, in pixels.
    #[serde(default)]
    pub blur_sigma: Option<f64>,
    /// Covert-attention aperture (peripheral masking only).
    #[serde(default)]
    pub attention: Option<AttentionSpec>,
    /// Randomness source for patch selection and other sampled geometry.
    #[serde(default)]
    pub seed: u64,
}

fn default_patch_size() -> usize {
    8
}

pub const DEFAULT_BLUR_SIGMA: f64 = 8.0;

impl MaskPlan {
    pub fn new(strategy: MaskStrategy, ratio: f64) -> Self {
        let blur_sigma = strategy.is_blurry().then_some(DEFAULT_BLUR_SIGMA);
        Self {
            strategy,
            ratio,
            patch_size: default_patch_size(),
            fixed_layout: None,
            blur_sigma,
            attention: None,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<(), ImagingError> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(ImagingError::RatioOutOfRange(self.ratio));
        }
        if matches!(self.strategy, MaskStrategy::RandomPatches | MaskStrategy::BlurryPatches) {
            let p = self.patch_size;
            if p == 0 || height % p != 0 || width % p != 0 {
                return Err(ImagingError::PatchGridMismatch { h: height, w: width, patch: p });
            }
        }
        if self.strategy.is_blurry() {
            match self.blur_sigma {
                Some(s) if s > 0.0 => {}
                Some(s) => return Err(ImagingError::NonPositiveSigma(s)),
                None => return Err(ImagingError::MissingSigma),
            }
        }
        if let Some(att) = &self.attention {
            if att.radius <= 0.0 {
                return Err(ImagingError::NonPositiveAttentionRadius(att.radius));
            }
        }
        Ok(())
    }
}

/// Arithmetic mean per channel over all pixels of the (pre-mask) image.
pub fn mean_color(img: &ImageBuffer) -> Vec<f32> {
    let (c, h, w) = img.data.dim();
    let n = (h * w) as f64;
    (0..c)
        .map(|ch| {
            let s: f64 = img.data.index_axis(ndarray::Axis(0), ch).iter().map(|&v| v as f64).sum();
            (s / n) as f32
        })
        .collect()
}

fn round_ties_even(x: f64) -> usize {
    let floor = x.floor();
    let frac = x - floor;
    let f = floor as usize;
    if frac > 0.5 {
        f + 1
    } else if frac < 0.5 {
        f
    } else if f % 2 == 0 {
        f
    } else {
        f + 1
    }
}

/// Sample the set of masked patch indices for a plan: exactly
/// `round(ratio * num_patches)` distinct cells (ties to even), drawn from the
/// plan's seed. Returned sorted; reusable as a `fixed_layout`.
pub fn sample_patch_layout(
    plan: &MaskPlan,
    height: usize,
    width: usize,
) -> Result<Vec<usize>, ImagingError> {
    plan.validate(height, width)?;
    let grid = (height / plan.patch_size) * (width / plan.patch_size);
    let n_masked = round_ties_even(plan.ratio * grid as f64).min(grid);
    let mut rng = seed::rng(plan.seed, "patch-layout", &[]);
    let mut chosen =
        rand::seq::index::sample(&mut rng, grid, n_masked).into_iter().collect::<Vec<_>>();
    chosen.sort_unstable();
    Ok(chosen)
}

fn masked_patches(
    plan: &MaskPlan,
    height: usize,
    width: usize,
) -> Result<Vec<usize>, ImagingError> {
    let grid = (height / plan.patch_size) * (width / plan.patch_size);
    match &plan.fixed_layout {
        Some(layout) => {
            for &i in layout {
                if i >= grid {
                    return Err(ImagingError::BadFixedLayout { index: i, count: grid });
                }
            }
            Ok(layout.clone())
        }
        None => sample_patch_layout(plan, height, width),
    }
}

fn patch_weight_map(patches: &[usize], patch: usize, height: usize, width: usize) -> LossWeightMap {
    let cols = width / patch;
    let mut w = Array2::zeros((height, width));
    for &p in patches {
        let py = (p / cols) * patch;
        let px = (p % cols) * patch;
        w.slice_mut(ndarray::s![py..py + patch, px..px + patch]).fill(1.0);
    }
    LossWeightMap::from_array_unchecked(w)
}

/// Replace `round(ratio * num_patches)` grid cells with the image's mean
/// color. Weight 1 on masked cells, 0 elsewhere.
pub fn apply_random_patch_mask(
    img: &ImageBuffer,
    plan: &MaskPlan,
) -> Result<(ImageBuffer, LossWeightMap), ImagingError> {
    expect_strategy(plan, MaskStrategy::RandomPatches)?;
    plan.validate(img.height(), img.width())?;
    let patches = masked_patches(plan, img.height(), img.width())?;
    let weights = patch_weight_map(&patches, plan.patch_size, img.height(), img.width());
    let out = fill_region_with_mean(img, &weights);
    Ok((out, weights))
}

/// Area of a circle of radius `r` centered in an `h`×`w` rectangle,
/// intersected with the rectangle.
fn centered_circle_area(r: f64, h: f64, w: f64) -> f64 {
    let a = w / 2.0;
    let b = h / 2.0;
    if r <= 0.0 {
        return 0.0;
    }
    if r * r >= a * a + b * b {
        return h * w;
    }
    let seg = |d: f64| {
        if r > d {
            r * r * (d / r).acos() - d * (r * r - d * d).sqrt()
        } else {
            0.0
        }
    };
    // r < corner distance, so the per-edge overhangs never overlap.
    std::f64::consts::PI * r * r - 2.0 * seg(a) - 2.0 * seg(b)
}

/// Radius of the centered circle whose *in-image* area is `(1 - ratio) * h * w`,
/// i.e. the circle that leaves exactly `ratio` of the image outside itself.
/// Coincides with `sqrt((1-ratio)*h*w/pi)` whenever that circle fits inside
/// the image; for small ratios the clipped-area equation is inverted
/// numerically so the masked fraction stays exact.
pub fn circle_radius_for_masked_fraction(height: usize, width: usize, ratio: f64) -> f64 {
    let (h, w) = (height as f64, width as f64);
    let target = (1.0 - ratio) * h * w;
    let analytic = (target / std::f64::consts::PI).sqrt();
    let half_min = 0.5 * h.min(w);
    if analytic <= half_min {
        return analytic;
    }
    // Bisection; centered_circle_area is continuous and strictly increasing
    // until the circle swallows the rectangle.
    let (mut lo, mut hi) = (half_min, (h * h + w * w).sqrt() / 2.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if centered_circle_area(mid, h, w) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn periphery_weight_map(plan: &MaskPlan, height: usize, width: usize) -> LossWeightMap {
    let r = circle_radius_for_masked_fraction(height, width, plan.ratio);
    let r2 = r * r;
    let cy = height as f64 / 2.0;
    let cx = width as f64 / 2.0;
    let data = Array2::from_shape_fn((height, width), |(y, x)| {
        let dy = y as f64 + 0.5 - cy;
        let dx = x as f64 + 0.5 - cx;
        // Pixel-center rule: inside the circle when strictly closer than r.
        if dy * dy + dx * dx < r2 {
            0.0
        } else {
            1.0
        }
    });
    LossWeightMap::from_array_unchecked(data)
}

/// Keep a centered full-resolution circle; replace the periphery with the
/// image's mean color. Weight 1 outside the circle.
pub fn apply_peripheral_mask(
    img: &ImageBuffer,
    plan: &MaskPlan,
) -> Result<(ImageBuffer, LossWeightMap), ImagingError> {
    expect_strategy(plan, MaskStrategy::MaskedPeriphery)?;
    plan.validate(img.height(), img.width())?;
    let weights = periphery_weight_map(plan, img.height(), img.width());
    let out = fill_region_with_mean(img, &weights);
    Ok((out, weights))
}

/// Same region geometry as the opaque counterpart, but the region content is
/// Gaussian-blurred instead of replaced. The blur is computed on the full
/// image and composited into the region, so no mean-color edge artifacts
/// appear. The weight map is identical to the opaque counterpart's.
pub fn apply_blur_variant(
    img: &ImageBuffer,
    plan: &MaskPlan,
) -> Result<(ImageBuffer, LossWeightMap), ImagingError> {
    let weights = match plan.strategy {
        MaskStrategy::BlurryPatches => {
            plan.validate(img.height(), img.width())?;
            let patches = masked_patches(plan, img.height(), img.width())?;
            patch_weight_map(&patches, plan.patch_size, img.height(), img.width())
        }
        MaskStrategy::BlurryPeriphery => {
            plan.validate(img.height(), img.width())?;
            periphery_weight_map(plan, img.height(), img.width())
        }
        got => {
            return Err(ImagingError::WrongStrategy { expected: MaskStrategy::BlurryPeriphery, got })
        }
    };
    let sigma = plan.blur_sigma.ok_or(ImagingError::MissingSigma)?;
    if sigma <= 0.0 {
        return Err(ImagingError::NonPositiveSigma(sigma));
    }
    let blurred = gaussian_blur(img, sigma);
    let mut out = img.data.clone();
    composite_region(&mut out, &blurred.data, &weights);
    Ok((ImageBuffer::from_array_unchecked(out), weights))
}

/// Eccentricity-dependent blur outside a fovea circle: a 6-level stack of
/// Gaussian blurs (sigma 0, 1, 2, 4, 8, 16 px) blended per pixel by a linear
/// map from eccentricity — level 0 at the fovea edge, level 5 at the farthest
/// image corner. Weight 1 everywhere outside the fovea (the whole degraded
/// region is the prediction target).
pub fn apply_foveal_filter(
    img: &ImageBuffer,
    fixation: &FixationSpec,
    plan: &MaskPlan,
) -> Result<(ImageBuffer, LossWeightMap), ImagingError> {
    expect_strategy(plan, MaskStrategy::FovealFilter)?;
    plan.validate(img.height(), img.width())?;
    let (h, w) = (img.height(), img.width());
    let (fy, fx) = fixation.center;
    if !(0.0..=h as f64).contains(&fy) || !(0.0..=w as f64).contains(&fx) {
        return Err(ImagingError::FixationOutsideImage(fy, fx));
    }
    if fixation.fovea_radius <= 0.0 {
        return Err(ImagingError::NonPositiveFoveaRadius(fixation.fovea_radius));
    }

    const LEVEL_SIGMAS: [f64; 6] = [0.0, 1.0, 2.0, 4.0, 8.0, 16.0];
    let levels: Vec<Array3<f32>> = LEVEL_SIGMAS
        .iter()
        .map(|&s| if s == 0.0 { img.data.clone() } else { gaussian_blur(img, s).data })
        .collect();

    let e_corner = [(0.0, 0.0), (0.0, w as f64), (h as f64, 0.0), (h as f64, w as f64)]
        .iter()
        .map(|&(cy, cx)| ((cy - fy).powi(2) + (cx - fx).powi(2)).sqrt())
        .fold(0.0f64, f64::max);
    let span = (e_corner - fixation.fovea_radius).max(1e-9);

    let c = img.channels();
    let mut out = img.data.clone();
    let mut weights = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let e = ((y as f64 + 0.5 - fy).powi(2) + (x as f64 + 0.5 - fx).powi(2)).sqrt();
            if e < fixation.fovea_radius {
                continue; // untouched, weight 0
            }
            weights[(y, x)] = 1.0;
            let level = (5.0 * (e - fixation.fovea_radius) / span).clamp(0.0, 5.0);
            let lo = level.floor() as usize;
            let hi = (lo + 1).min(5);
            let frac = (level - lo as f64) as f32;
            for ch in 0..c {
                let a = levels[lo][(ch, y, x)];
                let b = levels[hi][(ch, y, x)];
                out[(ch, y, x)] = a + frac * (b - a);
            }
        }
    }
    Ok((ImageBuffer::from_array_unchecked(out), LossWeightMap::from_array_unchecked(weights)))
}

/// Peripheral mask plus a second full-resolution circular aperture. Pixels
/// inside the attention circle are restored to the input and removed from the
/// weight map (union of two unmasked apertures).
pub fn add_covert_attention(
    img: &ImageBuffer,
    base: &MaskPlan,
) -> Result<(ImageBuffer, LossWeightMap), ImagingError> {
    expect_strategy(base, MaskStrategy::MaskedPeriphery)?;
    base.validate(img.height(), img.width())?;
    let att = base.attention.as_ref().ok_or(ImagingError::MissingAttention)?;
    let (h, w) = (img.height() as f64, img.width() as f64);
    let (ay, ax) = att.center;
    // Fully outside: closest point of the image rectangle farther than radius.
    let dy = (0.0f64.max(-ay)).max(ay - h);
    let dx = (0.0f64.max(-ax)).max(ax - w);
    if (dy * dy + dx * dx).sqrt() >= att.radius {
        return Err(ImagingError::AttentionOutsideImage);
    }

    let (masked, weights) = apply_peripheral_mask(img, base)?;
    let mut out = masked.data;
    let mut wmap = weights.data;
    let r2 = att.radius * att.radius;
    for y in 0..img.height() {
        for x in 0..img.width() {
            let ddy = y as f64 + 0.5 - ay;
            let ddx = x as f64 + 0.5 - ax;
            if ddy * ddy + ddx * ddx < r2 {
                wmap[(y, x)] = 0.0;
                for c in 0..img.channels() {
                    out[(c, y, x)] = img.data[(c, y, x)];
                }
            }
        }
    }
    Ok((ImageBuffer::from_array_unchecked(out), LossWeightMap::from_array_unchecked(wmap)))
}

/// Default fixation for a ratio-driven foveal plan: image center, fovea
/// radius chosen so the degraded (weighted) fraction equals the plan ratio.
pub fn default_fixation(plan: &MaskPlan, height: usize, width: usize) -> FixationSpec {
    FixationSpec {
        center: (height as f64 / 2.0, width as f64 / 2.0),
        fovea_radius: circle_radius_for_masked_fraction(height, width, plan.ratio),
    }
}

/// Apply whatever the plan describes. `MaskStrategy::None` returns the image
/// unchanged with a full (all-ones) weight map — the pure-autoencoding
/// baseline. A peripheral plan with an attention aperture takes the covert
/// attention path.
pub fn apply_plan(
    img: &ImageBuffer,
    plan: &MaskPlan,
) -> Result<(ImageBuffer, LossWeightMap), ImagingError> {
    match plan.strategy {
        MaskStrategy::RandomPatches => apply_random_patch_mask(img, plan),
        MaskStrategy::MaskedPeriphery => {
            if plan.attention.is_some() {
                add_covert_attention(img, plan)
            } else {
                apply_peripheral_mask(img, plan)
            }
        }
        MaskStrategy::BlurryPatches | MaskStrategy::BlurryPeriphery => {
            apply_blur_variant(img, plan)
        }
        MaskStrategy::FovealFilter => {
            let fixation = default_fixation(plan, img.height(), img.width());
            apply_foveal_filter(img, &fixation, plan)
        }
        MaskStrategy::None => {
            Ok((img.clone(), LossWeightMap::ones(img.height(), img.width())))
        }
    }
}

fn expect_strategy(plan: &MaskPlan, expected: MaskStrategy) -> Result<(), ImagingError> {
    if plan.strategy == expected {
        Ok(())
    } else {
        Err(ImagingError::WrongStrategy { expected, got: plan.strategy })
    }
}

/// Overwrite weighted pixels with the image mean color.
fn fill_region_with_mean(img: &ImageBuffer, weights: &LossWeightMap) -> ImageBuffer {
    let mean = mean_color(img);
    let mut out = img.data.clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            if weights.data[(y, x)] > 0.0 {
                for c in 0..img.channels() {
                    out[(c, y, x)] = mean[c];
                }
            }
        }
    }
    ImageBuffer::from_array_unchecked(out)
}

/// Overwrite weighted pixels of `dst` with the corresponding `src` pixels.
fn composite_region(dst: &mut Array3<f32>, src: &Array3<f32>, weights: &LossWeightMap) {
    let (c, h, w) = dst.dim();
    for y in 0..h {
        for x in 0..w {
            if weights.data[(y, x)] > 0.0 {
                for ch in 0..c {
                    dst[(ch, y, x)] = src[(ch, y, x)];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests;
