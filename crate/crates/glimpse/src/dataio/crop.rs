//! Random-resized-crop augmentation: rejection sampling of a crop rectangle
//! by target area fraction and aspect ratio, then bilinear resize.

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::imaging::ImageBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropParams {
    /// Crop area as a fraction of the source area.
    pub scale: (f64, f64),
    /// Crop aspect ratio (width / height).
    pub aspect: (f64, f64),
    /// Output edge length (square).
    pub out_size: usize,
}

impl Default for CropParams {
    fn default() -> Self {
        Self { scale: (0.08, 1.0), aspect: (0.75, 1.33), out_size: 96 }
    }
}

impl CropParams {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.scale.0 > self.scale.1 {
            return Err(DataError::DegenerateRange(self.scale.0, self.scale.1));
        }
        if self.aspect.0 > self.aspect.1 {
            return Err(DataError::DegenerateRange(self.aspect.0, self.aspect.1));
        }
        Ok(())
    }
}

/// A crop rectangle in source-pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropRect {
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
}

/// Sample a crop rectangle: up to 10 attempts of (uniform area fraction,
/// log-uniform aspect), accepted only if the realized integer rectangle still
/// satisfies both ranges; afterwards a centered square fallback.
pub fn sample_crop_rect(
    src_h: usize,
    src_w: usize,
    params: &CropParams,
    rng: &mut impl Rng,
) -> Result<CropRect, DataError> {
    params.validate()?;
    let area = (src_h * src_w) as f64;
    for _ in 0..10 {
        let target_area = rng.random_range(params.scale.0..=params.scale.1) * area;
        let log_range = params.aspect.0.ln()..=params.aspect.1.ln();
        let aspect = rng.random_range(log_range).exp();
        let w = (target_area * aspect).sqrt().round() as usize;
        let h = (target_area / aspect).sqrt().round() as usize;
        if w == 0 || h == 0 || w > src_w || h > src_h {
            continue;
        }
        let realized_fraction = (w * h) as f64 / area;
        let realized_aspect = w as f64 / h as f64;
        if realized_fraction < params.scale.0
            || realized_fraction > params.scale.1
            || realized_aspect < params.aspect.0
            || realized_aspect > params.aspect.1
        {
            continue;
        }
        let y = rng.random_range(0..=src_h - h);
        let x = rng.random_range(0..=src_w - w);
        return Ok(CropRect { y, x, h, w });
    }
    // Fallback: the largest centered square.
    let side = src_h.min(src_w);
    Ok(CropRect { y: (src_h - side) / 2, x: (src_w - side) / 2, h: side, w: side })
}

/// Bilinear sample of a single plane at fractional source coordinates
/// (half-pixel-center convention: identity when sizes match).
fn bilinear_plane(src: &ndarray::ArrayView2<f32>, out_h: usize, out_w: usize) -> Array2<f32> {
    let (h, w) = src.dim();
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    Array2::from_shape_fn((out_h, out_w), |(oy, ox)| {
        let fy = (oy as f64 + 0.5) * sy - 0.5;
        let fx = (ox as f64 + 0.5) * sx - 0.5;
        let y0 = fy.floor();
        let x0 = fx.floor();
        let ty = (fy - y0) as f32;
        let tx = (fx - x0) as f32;
        let clamp = |v: f64, hi: usize| (v.max(0.0) as usize).min(hi - 1);
        let (y0i, y1i) = (clamp(y0, h), clamp(y0 + 1.0, h));
        let (x0i, x1i) = (clamp(x0, w), clamp(x0 + 1.0, w));
        let top = src[(y0i, x0i)] * (1.0 - tx) + src[(y0i, x1i)] * tx;
        let bot = src[(y1i, x0i)] * (1.0 - tx) + src[(y1i, x1i)] * tx;
        (top * (1.0 - ty) + bot * ty).clamp(0.0, 1.0)
    })
}

/// Crop `rect` out of the image and bilinearly resize to `out_size`².
pub fn crop_and_resize(img: &ImageBuffer, rect: CropRect, out_size: usize) -> ImageBuffer {
    let c = img.channels();
    let mut out = Array3::zeros((c, out_size, out_size));
    for ch in 0..c {
        let plane = img.data().slice(ndarray::s![
            ch,
            rect.y..rect.y + rect.h,
            rect.x..rect.x + rect.w
        ]);
        out.index_axis_mut(ndarray::Axis(0), ch)
            .assign(&bilinear_plane(&plane, out_size, out_size));
    }
    ImageBuffer::from_array_unchecked(out)
}

/// Same crop/resize applied to a single-plane map (e.g. a confidence map), so
/// it stays aligned with its image under augmentation.
pub fn crop_and_resize_map(map: &Array2<f32>, rect: CropRect, out_size: usize) -> Array2<f32> {
    let plane = map.slice(ndarray::s![rect.y..rect.y + rect.h, rect.x..rect.x + rect.w]);
    bilinear_plane(&plane, out_size, out_size)
}

/// Random-resized crop: sample a rectangle, then resize to `out_size`².
pub fn random_resized_crop(
    img: &ImageBuffer,
    params: &CropParams,
    rng: &mut impl Rng,
) -> Result<ImageBuffer, DataError> {
    let rect = sample_crop_rect(img.height(), img.width(), params, rng)?;
    Ok(crop_and_resize(img, rect, params.out_size))
}
