//! Separable Gaussian blur with reflective padding.

use ndarray::Array3;

use super::ImageBuffer;

/// Kernel half-width: 3 sigma, at least one tap each side.
fn kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut k = Vec::with_capacity(2 * radius + 1);
    let denom = 2.0 * sigma * sigma;
    for t in -(radius as isize)..=(radius as isize) {
        k.push((-((t * t) as f64) / denom).exp());
    }
    let sum: f64 = k.iter().sum();
    k.iter().map(|&v| (v / sum) as f32).collect()
}

/// Mirror index into [0, n): reflects across the borders without repeating
/// the edge sample, folding as often as needed.
fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Full-image Gaussian blur, separable (rows then columns), reflect padding.
pub fn gaussian_blur(img: &ImageBuffer, sigma: f64) -> ImageBuffer {
    assert!(sigma > 0.0, "sigma must be positive");
    let k = kernel(sigma);
    let radius = (k.len() - 1) / 2;
    let (c, h, w) = img.data().dim();

    let mut tmp = Array3::<f32>::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f32;
                for (t, &kv) in k.iter().enumerate() {
                    let sx = reflect(x as isize + t as isize - radius as isize, w);
                    acc += kv * img.data()[(ch, y, sx)];
                }
                tmp[(ch, y, x)] = acc;
            }
        }
    }
    let mut out = Array3::<f32>::zeros((c, h, w));
    for ch in 0..c {
        for x in 0..w {
            for y in 0..h {
                let mut acc = 0.0f32;
                for (t, &kv) in k.iter().enumerate() {
                    let sy = reflect(y as isize + t as isize - radius as isize, h);
                    acc += kv * tmp[(ch, sy, x)];
                }
                // Normalized kernel on [0,1] data can only leave the range by
                // rounding; clamp to keep the image invariant exact.
                out[(ch, y, x)] = acc.clamp(0.0, 1.0);
            }
        }
    }
    ImageBuffer::from_array_unchecked(out)
}
