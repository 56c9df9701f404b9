//! Procedural image corpus for desk-scale validation and the guide examples.
//!
//! Ten classes: five shapes (disk, square, triangle, ring, cross) crossed with
//! two textures (solid, striped), drawn over a random two-color gradient
//! background with additive noise. Each image comes with its exact foreground
//! mask, which doubles as a segmentation-confidence map. Images are emitted in
//! the same record-backed [`ImageSet`] the STL-10 loader produces, so the
//! whole pipeline downstream of ingestion is exercised unchanged.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::{ConfidenceSet, ImageSet};
use crate::imaging::ImageBuffer;
use crate::seed;

pub const CLASSES: usize = 10;

#[derive(Debug, Clone, Copy)]
pub struct SynthSpec {
    pub size: usize,
    /// Additive uniform noise amplitude.
    pub noise: f32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { size: 96, noise: 0.08, seed: 0 }
    }
}

#[derive(Clone, Copy)]
enum Shape {
    Disk,
    Square,
    Triangle,
    Ring,
    Cross,
}

impl Shape {
    fn of_class(class: usize) -> Self {
        match class % 5 {
            0 => Shape::Disk,
            1 => Shape::Square,
            2 => Shape::Triangle,
            3 => Shape::Ring,
            _ => Shape::Cross,
        }
    }

    fn contains(self, dy: f64, dx: f64, s: f64) -> bool {
        match self {
            Shape::Disk => dy * dy + dx * dx <= s * s,
            Shape::Square => dy.abs().max(dx.abs()) <= s * 0.9,
            Shape::Triangle => {
                let t = (dy + s) / (2.0 * s);
                (0.0..=1.0).contains(&t) && dx.abs() <= t * s
            }
            Shape::Ring => {
                let d2 = dy * dy + dx * dx;
                d2 <= s * s && d2 >= (0.55 * s) * (0.55 * s)
            }
            Shape::Cross => {
                let arm = s / 3.0;
                (dx.abs() <= arm && dy.abs() <= s) || (dy.abs() <= arm && dx.abs() <= s)
            }
        }
    }
}

fn random_color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()]
}

/// Render one image of the given class. Returns the image and its foreground
/// mask (255 inside the shape).
pub fn render(spec: &SynthSpec, class: usize, index: u64) -> (ImageBuffer, Vec<u8>) {
    let n = spec.size;
    let mut rng = seed::rng(spec.seed, "synth", &[index]);
    let shape = Shape::of_class(class);
    let striped = class >= 5;

    let bg_a = random_color(&mut rng);
    let bg_b = random_color(&mut rng);
    let horizontal_grad = rng.random::<bool>();
    let mut fg_a = random_color(&mut rng);
    let fg_b = random_color(&mut rng);
    // keep the object distinguishable from the mean background
    for c in 0..3 {
        let bg_mid = 0.5 * (bg_a[c] + bg_b[c]);
        if (fg_a[c] - bg_mid).abs() < 0.2 {
            fg_a[c] = if bg_mid < 0.5 { bg_mid + 0.35 } else { bg_mid - 0.35 };
        }
    }

    let cy = (0.3 + 0.4 * rng.random::<f64>()) * n as f64;
    let cx = (0.3 + 0.4 * rng.random::<f64>()) * n as f64;
    let s = (0.18 + 0.14 * rng.random::<f64>()) * n as f64;
    let stripe_angle = rng.random::<f64>() * std::f64::consts::PI;
    let stripe_phase = rng.random::<f64>() * 10.0;
    let stripe_width = s / 3.5;

    let mut mask = vec![0u8; n * n];
    let mut img = ImageBuffer::zeros(3, n, n).into_array();
    for y in 0..n {
        for x in 0..n {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let grad_t =
                if horizontal_grad { px / n as f64 } else { py / n as f64 } as f32;
            let (dy, dx) = (py - cy, px - cx);
            let inside = shape.contains(dy, dx, s);
            let base = if inside {
                mask[y * n + x] = 255;
                if striped {
                    let u = dx * stripe_angle.cos() + dy * stripe_angle.sin() + stripe_phase;
                    let band = (u / stripe_width).floor() as i64;
                    if band.rem_euclid(2) == 0 {
                        fg_a
                    } else {
                        fg_b
                    }
                } else {
                    fg_a
                }
            } else {
                [
                    bg_a[0] + (bg_b[0] - bg_a[0]) * grad_t,
                    bg_a[1] + (bg_b[1] - bg_a[1]) * grad_t,
                    bg_a[2] + (bg_b[2] - bg_a[2]) * grad_t,
                ]
            };
            for c in 0..3 {
                let noise = (rng.random::<f32>() - 0.5) * 2.0 * spec.noise;
                img[(c, y, x)] = (base[c] + noise).clamp(0.0, 1.0);
            }
        }
    }
    (ImageBuffer::from_array_unchecked(img), mask)
}

/// Generate `n` images with balanced labels (`label = index % 10`) plus their
/// confidence maps. `index_offset` shifts the randomness stream so different
/// splits draw disjoint images.
pub fn generate(spec: &SynthSpec, n: usize, index_offset: u64) -> (ImageSet, ConfidenceSet) {
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut planes = Vec::with_capacity(n * spec.size * spec.size);
    for i in 0..n {
        let class = i % CLASSES;
        let (img, mask) = render(spec, class, index_offset + i as u64);
        images.push(img);
        labels.push(class as u8);
        planes.extend_from_slice(&mask);
    }
    (
        ImageSet::from_images(&images, Some(labels)),
        ConfidenceSet::from_planes(planes, spec.size, spec.size),
    )
}

/// Unlabeled variant of [`generate`].
pub fn generate_unlabeled(spec: &SynthSpec, n: usize, index_offset: u64) -> (ImageSet, ConfidenceSet) {
    let (set, conf) = generate(spec, n, index_offset);
    let images: Vec<ImageBuffer> = (0..set.len()).map(|i| set.get(i)).collect();
    (ImageSet::from_images(&images, None), conf)
}
