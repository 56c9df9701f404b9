//! Minimal CNN machinery: convolution and transposed convolution lowered to
//! GEMM, residual blocks, explicit backward passes, and Adam.
//!
//! Activations live in `(C, N, H, W)` order so that a convolution over a chunk
//! of N samples is exactly one GEMM against an im2col buffer, with no layout
//! shuffles between layers. Everything is generic over `f32`/`f64`: training
//! runs in `f32`, the finite-difference gradient checks in `f64`.

mod adam;
mod block;

pub use adam::Adam;
pub use block::{Activation, BlockStack, BlockTape, GradStore, LayerGrads, ResBlock, StackTape};

use ndarray::{Array1, Array2, Array4};

use crate::blas::{gemm, Gemm, Trans};

/// Element type of the network: f32 for speed, f64 for verification.
pub trait Scalar:
    num_traits::Float
    + Gemm
    + ndarray::ScalarOperand
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64_val(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64_val(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64_val(self) -> f64 {
        self
    }
}

/// Geometry of a convolution `(c_in, h_in, w_in) -> (c_out, h_out, w_out)`.
/// A transposed layer reuses the same geometry with input and output roles
/// swapped, which makes it the exact adjoint of the forward map and removes
/// any output-padding ambiguity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_in: usize,
    pub w_in: usize,
}

impl ConvGeom {
    pub fn new(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        h_in: usize,
        w_in: usize,
    ) -> Self {
        assert!(h_in + 2 * pad >= k && w_in + 2 * pad >= k, "kernel larger than padded input");
        Self { c_in, c_out, k, stride, pad, h_in, w_in }
    }

    pub fn h_out(&self) -> usize {
        (self.h_in + 2 * self.pad - self.k) / self.stride + 1
    }
    pub fn w_out(&self) -> usize {
        (self.w_in + 2 * self.pad - self.k) / self.stride + 1
    }
    pub fn spatial_out(&self) -> usize {
        self.h_out() * self.w_out()
    }
    /// Rows of the im2col matrix.
    pub fn cols_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }
}

/// Reusable im2col buffer.
#[derive(Default)]
pub struct Scratch<T> {
    buf: Vec<T>,
}

impl<T: Scalar> Scratch<T> {
    pub fn new() -> Self {
        Self { buf: Vec::new() }
    }
    fn take(&mut self, len: usize) -> &mut [T] {
        if self.buf.len() < len {
            self.buf.resize(len, T::zero());
        }
        &mut self.buf[..len]
    }
}

/// Unfold `(c_in, N, h_in, w_in)` into `(c_in*k*k, N*h_out*w_out)`. Every
/// entry of `cols` is written (padding positions with zero).
fn im2col<T: Scalar>(x: &Array4<T>, g: &ConvGeom, cols: &mut [T]) {
    let (c_in, n, h_in, w_in) = x.dim();
    debug_assert_eq!(c_in, g.c_in);
    debug_assert_eq!((h_in, w_in), (g.h_in, g.w_in));
    let (h_out, w_out) = (g.h_out(), g.w_out());
    let s = h_out * w_out;
    let ns = n * s;
    debug_assert_eq!(cols.len(), g.cols_rows() * ns);
    let xs = x.as_slice().expect("im2col: non-contiguous input");

    for ci in 0..c_in {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let row_base = row * ns;
                let x_off = kx as isize - g.pad as isize;
                for ni in 0..n {
                    for oy in 0..h_out {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        let dst_base = row_base + ni * s + oy * w_out;
                        let dst = &mut cols[dst_base..dst_base + w_out];
                        if iy < 0 || iy >= h_in as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src_base = ((ci * n + ni) * h_in + iy as usize) * w_in;
                        let src = &xs[src_base..src_base + w_in];
                        if g.stride == 1 {
                            let lo = (-x_off).max(0) as usize;
                            let hi = (w_in as isize - x_off).clamp(0, w_out as isize) as usize;
                            dst[..lo].fill(T::zero());
                            dst[hi..].fill(T::zero());
                            let s0 = (lo as isize + x_off) as usize;
                            dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                        } else {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * g.stride) as isize + x_off;
                                *d = if ix >= 0 && ix < w_in as isize {
                                    src[ix as usize]
                                } else {
                                    T::zero()
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add `(c_in*k*k, N*h_out*w_out)` back onto
/// `(c_in, N, h_in, w_in)`.
fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeom, out: &mut Array4<T>) {
    let (c_in, n, h_in, w_in) = out.dim();
    debug_assert_eq!(c_in, g.c_in);
    let (h_out, w_out) = (g.h_out(), g.w_out());
    let s = h_out * w_out;
    let ns = n * s;
    let os = out.as_slice_mut().expect("col2im: non-contiguous output");

    for ci in 0..c_in {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let row_base = row * ns;
                let x_off = kx as isize - g.pad as isize;
                for ni in 0..n {
                    for oy in 0..h_out {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= h_in as isize {
                            continue;
                        }
                        let src_base = row_base + ni * s + oy * w_out;
                        let src = &cols[src_base..src_base + w_out];
                        let dst_base = ((ci * n + ni) * h_in + iy as usize) * w_in;
                        let dst = &mut os[dst_base..dst_base + w_in];
                        if g.stride == 1 {
                            let lo = (-x_off).max(0) as usize;
                            let hi = (w_in as isize - x_off).clamp(0, w_out as isize) as usize;
                            let s0 = (lo as isize + x_off) as usize;
                            for i in 0..hi - lo {
                                dst[s0 + i] += src[lo + i];
                            }
                        } else {
                            for (ox, &v) in src.iter().enumerate() {
                                let ix = (ox * g.stride) as isize + x_off;
                                if ix >= 0 && ix < w_in as isize {
                                    dst[ix as usize] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// A (possibly transposed) convolution layer with bias.
///
/// Weights are stored as `(c_out, c_in*k*k)` in the geometry's orientation.
/// The transposed layer applies the exact adjoint of the geometry's forward
/// map, so `conv: (c_in,H,W) -> (c_out,H',W')` and
/// `transposed: (c_out,H',W') -> (c_in,H,W)`.
#[derive(Debug, Clone)]
pub struct ConvLayer<T> {
    pub id: usize,
    pub geom: ConvGeom,
    pub transposed: bool,
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn new(id: usize, geom: ConvGeom, transposed: bool) -> Self {
        let b_len = if transposed { geom.c_in } else { geom.c_out };
        Self {
            id,
            geom,
            transposed,
            w: Array2::zeros((geom.c_out, geom.cols_rows())),
            b: Array1::zeros(b_len),
        }
    }

    /// Fan-in-scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)), where
    /// fan_in is the channel count feeding the layer times k².
    pub fn init(&mut self, rng: &mut rand_chacha::ChaCha8Rng) {
        use rand::Rng;
        let fan_in = self.in_channels() * self.geom.k * self.geom.k;
        let bound = 1.0 / (fan_in as f64).sqrt();
        for v in self.w.iter_mut() {
            *v = T::from_f64(rng.random_range(-bound..bound));
        }
        for v in self.b.iter_mut() {
            *v = T::from_f64(rng.random_range(-bound..bound));
        }
    }

    pub fn in_channels(&self) -> usize {
        if self.transposed {
            self.geom.c_out
        } else {
            self.geom.c_in
        }
    }
    pub fn out_channels(&self) -> usize {
        if self.transposed {
            self.geom.c_in
        } else {
            self.geom.c_out
        }
    }
    pub fn output_hw(&self) -> (usize, usize) {
        if self.transposed {
            (self.geom.h_in, self.geom.w_in)
        } else {
            (self.geom.h_out(), self.geom.w_out())
        }
    }
    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn forward(&self, x: &Array4<T>, scratch: &mut Scratch<T>) -> Array4<T> {
        let n = x.dim().1;
        let g = &self.geom;
        let s = g.spatial_out();
        if !self.transposed {
            debug_assert_eq!((x.dim().0, x.dim().2, x.dim().3), (g.c_in, g.h_in, g.w_in));
            let cols = scratch.take(g.cols_rows() * n * s);
            im2col(x, g, cols);
            let mut y = Array4::zeros((g.c_out, n, g.h_out(), g.w_out()));
            gemm(
                Trans::No,
                Trans::No,
                g.c_out,
                n * s,
                g.cols_rows(),
                T::one(),
                self.w.as_slice().unwrap(),
                cols,
                T::zero(),
                y.as_slice_mut().unwrap(),
            );
            add_channel_bias(&mut y, &self.b);
            y
        } else {
            debug_assert_eq!((x.dim().0, x.dim().2, x.dim().3), (g.c_out, g.h_out(), g.w_out()));
            let cols = scratch.take(g.cols_rows() * n * s);
            gemm(
                Trans::Yes,
                Trans::No,
                g.cols_rows(),
                n * s,
                g.c_out,
                T::one(),
                self.w.as_slice().unwrap(),
                x.as_slice().unwrap(),
                T::zero(),
                cols,
            );
            let mut y = Array4::zeros((g.c_in, n, g.h_in, g.w_in));
            col2im_add(cols, g, &mut y);
            add_channel_bias(&mut y, &self.b);
            y
        }
    }

    /// Backward pass: accumulates `dW`/`db` into `grads` and returns the
    /// gradient with respect to the layer input. `x` must be the input the
    /// forward pass saw.
    pub fn backward(
        &self,
        x: &Array4<T>,
        dy: &Array4<T>,
        grads: &mut LayerGrads<T>,
        scratch: &mut Scratch<T>,
    ) -> Array4<T> {
        let n = x.dim().1;
        let g = &self.geom;
        let s = g.spatial_out();
        if !self.transposed {
            // y = W * cols(x) + b
            let cols = scratch.take(g.cols_rows() * n * s);
            im2col(x, g, cols);
            gemm(
                Trans::No,
                Trans::Yes,
                g.c_out,
                g.cols_rows(),
                n * s,
                T::one(),
                dy.as_slice().unwrap(),
                cols,
                T::one(),
                grads.w.as_slice_mut().unwrap(),
            );
            sum_channel_bias(dy, &mut grads.b);
            // reuse the cols buffer for the data gradient
            gemm(
                Trans::Yes,
                Trans::No,
                g.cols_rows(),
                n * s,
                g.c_out,
                T::one(),
                self.w.as_slice().unwrap(),
                dy.as_slice().unwrap(),
                T::zero(),
                cols,
            );
            let mut dx = Array4::zeros((g.c_in, n, g.h_in, g.w_in));
            col2im_add(cols, g, &mut dx);
            dx
        } else {
            // y = col2im(W^T * x_mat) + b  =>  dx = W * im2col(dy)
            let cols = scratch.take(g.cols_rows() * n * s);
            im2col(dy, g, cols);
            gemm(
                Trans::No,
                Trans::Yes,
                g.c_out,
                g.cols_rows(),
                n * s,
                T::one(),
                x.as_slice().unwrap(),
                cols,
                T::one(),
                grads.w.as_slice_mut().unwrap(),
            );
            sum_channel_bias(dy, &mut grads.b);
            let mut dx = Array4::zeros((g.c_out, n, g.h_out(), g.w_out()));
            gemm(
                Trans::No,
                Trans::No,
                g.c_out,
                n * s,
                g.cols_rows(),
                T::one(),
                self.w.as_slice().unwrap(),
                cols,
                T::zero(),
                dx.as_slice_mut().unwrap(),
            );
            dx
        }
    }
}

fn add_channel_bias<T: Scalar>(y: &mut Array4<T>, b: &Array1<T>) {
    let (c, n, h, w) = y.dim();
    let plane = n * h * w;
    let ys = y.as_slice_mut().unwrap();
    for ch in 0..c {
        let bv = b[ch];
        for v in &mut ys[ch * plane..(ch + 1) * plane] {
            *v += bv;
        }
    }
}

fn sum_channel_bias<T: Scalar>(dy: &Array4<T>, db: &mut Array1<T>) {
    let (c, n, h, w) = dy.dim();
    let plane = n * h * w;
    let ds = dy.as_slice().unwrap();
    for ch in 0..c {
        let mut acc = T::zero();
        for v in &ds[ch * plane..(ch + 1) * plane] {
            acc += *v;
        }
        db[ch] += acc;
    }
}
