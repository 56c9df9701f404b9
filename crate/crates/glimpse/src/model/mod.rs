//! The residual convolutional autoencoder and the linear probe head.
//!
//! Default contract: the encoder maps 96×96×3 to a 12×12×128 latent through
//! nine residual blocks (three stages, stride-2 entry at blocks 1, 4, 7,
//! channels 32/64/128); the decoder mirrors it back to 96×96×3 through a
//! sigmoid. A reduced variant (fewer blocks per stage, smaller inputs and
//! widths) exists for fast finite-difference verification.

mod checkpoint;

pub use checkpoint::{load_params, save_params, CheckpointError};

use ndarray::{Array2, Array3, Array4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::ImageBuffer;
use crate::nn::{
    Activation, Adam, BlockStack, ConvGeom, ConvLayer, GradStore, ResBlock, Scalar, Scratch,
    StackTape,
};
use crate::seed;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("decoder spec is not the mirror of the encoder spec")]
    SpecMismatch,
    #[error("input shape {got:?} does not match the expected {want:?}")]
    BadInputShape { want: (usize, usize, usize), got: (usize, usize, usize) },
}

/// Encoder architecture. Three stages with stride-2 entries are fixed; width,
/// depth and input size scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    /// Square input edge length; must be divisible by 8.
    pub input_size: usize,
    pub input_channels: usize,
    /// Channels of the first stage; doubled at each stage entry.
    pub base_channels: usize,
    /// Residual blocks per stage (the first one downsamples).
    pub blocks_per_stage: usize,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self { input_size: 96, input_channels: 3, base_channels: 32, blocks_per_stage: 3 }
    }
}

impl EncoderSpec {
    /// Reduced spec for finite-difference gradient checks: one block per
    /// stage, 16×16 inputs, 8 base channels.
    pub fn reduced() -> Self {
        Self { input_size: 16, input_channels: 3, base_channels: 8, blocks_per_stage: 1 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_size == 0 || self.input_size % 8 != 0 {
            return Err(ModelError::InvalidSpec(format!(
                "input_size {} must be a positive multiple of 8",
                self.input_size
            )));
        }
        if self.input_channels == 0 || self.base_channels == 0 || self.blocks_per_stage == 0 {
            return Err(ModelError::InvalidSpec("zero-sized field".into()));
        }
        Ok(())
    }

    pub fn latent_channels(&self) -> usize {
        self.base_channels * 4
    }
    pub fn latent_size(&self) -> usize {
        self.input_size / 8
    }
    /// Flattened latent dimensionality (probe input size).
    pub fn latent_dim(&self) -> usize {
        self.latent_channels() * self.latent_size() * self.latent_size()
    }
    pub fn num_blocks(&self) -> usize {
        3 * self.blocks_per_stage
    }
}

/// Decoder architecture: fully determined as the mirror of an encoder spec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderSpec {
    mirror_of: EncoderSpec,
}

impl DecoderSpec {
    pub fn mirror(enc: &EncoderSpec) -> Self {
        Self { mirror_of: *enc }
    }
    pub fn encoder_spec(&self) -> &EncoderSpec {
        &self.mirror_of
    }
}

/// Encoder output for one sample: `(latent_channels, latent_size, latent_size)`.
pub type LatentCode = Array3<f32>;

/// The autoencoder: an encoder stack and its mirrored decoder stack.
#[derive(Debug, Clone)]
pub struct Autoencoder<T> {
    pub encoder: BlockStack<T>,
    pub decoder: BlockStack<T>,
    spec: EncoderSpec,
    init_seed: u64,
}

/// Number of samples processed per GEMM batch. Fixed (not tied to thread
/// count) so results never depend on the machine.
pub const CHUNK: usize = 4;

/// Build encoder and decoder with seed-deterministic initialization.
/// `dec` must be the mirror of `enc`.
pub fn build_autoencoder<T: Scalar>(
    enc: &EncoderSpec,
    dec: &DecoderSpec,
    seed_val: u64,
) -> Result<Autoencoder<T>, ModelError> {
    if dec.encoder_spec() != enc {
        return Err(ModelError::SpecMismatch);
    }
    Autoencoder::new(enc, seed_val)
}

impl<T: Scalar> Autoencoder<T> {
    pub fn new(spec: &EncoderSpec, init_seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut next_id = 0usize;
        let encoder = build_encoder(spec, &mut next_id);
        let decoder = build_decoder(spec, &mut next_id);
        let mut model = Self { encoder, decoder, spec: *spec, init_seed };
        // Per-layer init streams: adding blocks elsewhere never shifts the
        // randomness of existing layers.
        for layer in model.layers_mut() {
            let mut rng = seed::rng(init_seed, "init", &[layer.id as u64]);
            layer.init(&mut rng);
        }
        Ok(model)
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }
    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn layers(&self) -> impl Iterator<Item = &ConvLayer<T>> {
        self.encoder.layers().chain(self.decoder.layers())
    }
    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut ConvLayer<T>> {
        self.encoder.layers_mut().chain(self.decoder.layers_mut())
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(|l| l.param_count()).sum()
    }

    /// Content hash of all parameters in traversal order; used by the
    /// frozen-encoder contract and determinism tests.
    pub fn param_checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for layer in self.layers() {
            for v in layer.w.iter().chain(layer.b.iter()) {
                for b in v.to_f64_val().to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn encoder_checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for layer in self.encoder.layers() {
            for v in layer.w.iter().chain(layer.b.iter()) {
                for b in v.to_f64_val().to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Adam slot layout: two slots per layer (weights, bias), in id order.
    pub fn adam_slot_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::new();
        for layer in self.layers() {
            debug_assert_eq!(sizes.len(), layer.id * 2);
            sizes.push(layer.w.len());
            sizes.push(layer.b.len());
        }
        sizes
    }

    pub fn grad_store(&self) -> GradStore<T> {
        GradStore::zeros_for(self.layers())
    }

    /// One optimizer step from accumulated gradients.
    pub fn adam_step(&mut self, opt: &mut Adam<T>, grads: &GradStore<T>, lr: T, wd: T) {
        opt.begin_step();
        for layer in self.encoder.layers_mut().chain(self.decoder.layers_mut()) {
            let g = grads.layer(layer.id);
            opt.update(layer.id * 2, layer.w.as_slice_mut().unwrap(), g.w.as_slice().unwrap(), lr, wd);
            opt.update(layer.id * 2 + 1, layer.b.as_slice_mut().unwrap(), g.b.as_slice().unwrap(), lr, wd);
        }
    }

    fn check_input(&self, x: &Array4<T>) -> Result<(), ModelError> {
        let want = (self.spec.input_channels, self.spec.input_size, self.spec.input_size);
        let got = (x.dim().0, x.dim().2, x.dim().3);
        if want != got {
            return Err(ModelError::BadInputShape { want, got });
        }
        Ok(())
    }

    /// Training forward over one chunk `(C, n, H, W)`; returns both tapes.
    pub fn forward_train(
        &self,
        x: Array4<T>,
        scratch: &mut Scratch<T>,
    ) -> Result<(StackTape<T>, StackTape<T>), ModelError> {
        self.check_input(&x)?;
        let enc_tape = self.encoder.forward_train(x, scratch);
        let dec_tape = self.decoder.forward_train(enc_tape.output().clone(), scratch);
        Ok((enc_tape, dec_tape))
    }

    /// Backward from the loss gradient at the decoder output; accumulates
    /// parameter gradients and returns the gradient at the latent.
    pub fn backward(
        &self,
        enc_tape: &StackTape<T>,
        dec_tape: &StackTape<T>,
        dpred: Array4<T>,
        grads: &mut GradStore<T>,
        scratch: &mut Scratch<T>,
    ) -> Array4<T> {
        let dlatent = self.decoder.backward(dec_tape, dpred, grads, scratch);
        self.encoder.backward(enc_tape, dlatent, grads, scratch)
    }

    /// Inference-mode encode of a chunk `(C, n, H, W)` -> `(4B, n, H/8, W/8)`.
    pub fn encode_chunk(
        &self,
        x: &Array4<T>,
        scratch: &mut Scratch<T>,
    ) -> Result<Array4<T>, ModelError> {
        self.check_input(x)?;
        Ok(self.encoder.forward_eval(x, scratch))
    }

    /// Inference-mode decode of a latent chunk.
    pub fn decode_chunk(&self, z: &Array4<T>, scratch: &mut Scratch<T>) -> Array4<T> {
        self.decoder.forward_eval(z, scratch)
    }
}

impl Autoencoder<f32> {
    /// Encode a batch of images; order-preserving, chunked internally.
    pub fn encode(&self, images: &[ImageBuffer]) -> Result<Vec<LatentCode>, ModelError> {
        let mut scratch = Scratch::new();
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(CHUNK) {
            let x = images_to_chunk(chunk);
            let z = self.encode_chunk(&x, &mut scratch)?;
            out.extend(chunk_to_samples(&z));
        }
        Ok(out)
    }

    /// Decode a batch of latents to images (values in the open interval (0,1)).
    pub fn decode(&self, latents: &[LatentCode]) -> Vec<Array3<f32>> {
        let mut scratch = Scratch::new();
        let mut out = Vec::with_capacity(latents.len());
        for chunk in latents.chunks(CHUNK) {
            let z = samples_to_chunk(chunk);
            let y = self.decode_chunk(&z, &mut scratch);
            out.extend(chunk_to_samples(&y));
        }
        out
    }
}

fn build_encoder<T: Scalar>(spec: &EncoderSpec, next_id: &mut usize) -> BlockStack<T> {
    let mut blocks = Vec::new();
    let mut c_prev = spec.input_channels;
    let mut hw = spec.input_size;
    for stage in 0..3 {
        let c = spec.base_channels << stage;
        for b in 0..spec.blocks_per_stage {
            let entry = b == 0;
            // ids are assigned in ResBlock::layers() order: conv1, conv2, proj
            let (g1, gp, hw_out) = if entry {
                (
                    ConvGeom::new(c_prev, c, 3, 2, 1, hw, hw),
                    Some(ConvGeom::new(c_prev, c, 1, 2, 0, hw, hw)),
                    hw / 2,
                )
            } else {
                (ConvGeom::new(c, c, 3, 1, 1, hw, hw), None, hw)
            };
            let conv1 = ConvLayer::new(take_id(next_id), g1, false);
            let g2 = ConvGeom::new(c, c, 3, 1, 1, hw_out, hw_out);
            let conv2 = ConvLayer::new(take_id(next_id), g2, false);
            let proj = gp.map(|g| ConvLayer::new(take_id(next_id), g, false));
            blocks.push(ResBlock { conv1, conv2, proj, out_act: Activation::Relu });
            hw = hw_out;
        }
        c_prev = c;
    }
    BlockStack { blocks }
}

fn build_decoder<T: Scalar>(spec: &EncoderSpec, next_id: &mut usize) -> BlockStack<T> {
    let mut blocks = Vec::new();
    let mut hw = spec.latent_size();
    for stage in 0..3 {
        let c = spec.latent_channels() >> stage;
        let c_next = if stage < 2 { c / 2 } else { spec.input_channels };
        for b in 0..spec.blocks_per_stage {
            let exit = b == spec.blocks_per_stage - 1;
            if !exit {
                let g1 = ConvGeom::new(c, c, 3, 1, 1, hw, hw);
                let g2 = ConvGeom::new(c, c, 3, 1, 1, hw, hw);
                blocks.push(ResBlock {
                    conv1: ConvLayer::new(take_id(next_id), g1, false),
                    conv2: ConvLayer::new(take_id(next_id), g2, false),
                    proj: None,
                    out_act: Activation::Relu,
                });
            } else {
                // Upsampling block: transposed 3x3 (stride-2 conv adjoint)
                // with a transposed 1x1 skip projection.
                let g1 = ConvGeom::new(c_next, c, 3, 2, 1, hw * 2, hw * 2);
                let gp = ConvGeom::new(c_next, c, 1, 2, 0, hw * 2, hw * 2);
                let g2 = ConvGeom::new(c_next, c_next, 3, 1, 1, hw * 2, hw * 2);
                let last = stage == 2;
                let conv1 = ConvLayer::new(take_id(next_id), g1, true);
                let conv2 = ConvLayer::new(take_id(next_id), g2, false);
                let proj = Some(ConvLayer::new(take_id(next_id), gp, true));
                blocks.push(ResBlock {
                    conv1,
                    conv2,
                    proj,
                    out_act: if last { Activation::Sigmoid } else { Activation::Relu },
                });
                hw *= 2;
            }
        }
    }
    BlockStack { blocks }
}

fn take_id(next: &mut usize) -> usize {
    let id = *next;
    *next += 1;
    id
}

/// Assemble images (each `(C,H,W)`) into a `(C, n, H, W)` chunk.
pub fn images_to_chunk(images: &[ImageBuffer]) -> Array4<f32> {
    assert!(!images.is_empty());
    let (c, h, w) = images[0].data().dim();
    let mut out = Array4::zeros((c, images.len(), h, w));
    for (n, img) in images.iter().enumerate() {
        assert_eq!(img.data().dim(), (c, h, w), "mixed shapes in chunk");
        for ch in 0..c {
            out.index_axis_mut(ndarray::Axis(0), ch)
                .index_axis_mut(ndarray::Axis(0), n)
                .assign(&img.data().index_axis(ndarray::Axis(0), ch));
        }
    }
    out
}

/// Assemble per-sample `(C,H,W)` arrays into a `(C, n, H, W)` chunk.
pub fn samples_to_chunk(samples: &[Array3<f32>]) -> Array4<f32> {
    assert!(!samples.is_empty());
    let (c, h, w) = samples[0].dim();
    let mut out = Array4::zeros((c, samples.len(), h, w));
    for (n, s) in samples.iter().enumerate() {
        for ch in 0..c {
            out.index_axis_mut(ndarray::Axis(0), ch)
                .index_axis_mut(ndarray::Axis(0), n)
                .assign(&s.index_axis(ndarray::Axis(0), ch));
        }
    }
    out
}

/// Split a `(C, n, H, W)` chunk into per-sample `(C, H, W)` arrays.
pub fn chunk_to_samples<T: Scalar>(chunk: &Array4<T>) -> Vec<Array3<T>> {
    let (c, n, h, w) = chunk.dim();
    (0..n)
        .map(|ni| {
            Array3::from_shape_fn((c, h, w), |(ch, y, x)| chunk[(ch, ni, y, x)])
        })
        .collect()
}

/// Linear readout on the flattened latent: `logits = W z + b`.
#[derive(Debug, Clone)]
pub struct ProbeHead {
    /// `(classes, latent_dim)`
    pub w: Array2<f32>,
    pub b: Array2<f32>,
}

impl ProbeHead {
    pub fn zeros(latent_dim: usize, classes: usize) -> Self {
        Self { w: Array2::zeros((classes, latent_dim)), b: Array2::zeros((1, classes)) }
    }

    pub fn init(latent_dim: usize, classes: usize, seed_val: u64) -> Self {
        use rand::Rng;
        let mut rng = seed::rng(seed_val, "probe-init", &[]);
        let bound = 1.0 / (latent_dim as f64).sqrt();
        let w = Array2::from_shape_fn((classes, latent_dim), |_| {
            rng.random_range(-bound..bound) as f32
        });
        Self { w, b: Array2::zeros((1, classes)) }
    }

    pub fn classes(&self) -> usize {
        self.w.dim().0
    }
    pub fn latent_dim(&self) -> usize {
        self.w.dim().1
    }

    /// Weight parameter count (bias excluded, matching the latent×classes
    /// product convention).
    pub fn weight_count(&self) -> usize {
        self.w.len()
    }

    /// Logits for one flattened latent.
    pub fn forward(&self, latent_flat: &[f32]) -> Vec<f32> {
        assert_eq!(latent_flat.len(), self.latent_dim());
        let mut out = vec![0.0f32; self.classes()];
        for (k, row) in self.w.outer_iter().enumerate() {
            let mut acc = self.b[(0, k)];
            for (wv, xv) in row.iter().zip(latent_flat) {
                acc += wv * xv;
            }
            out[k] = acc;
        }
        out
    }

    /// Logits for a feature matrix `(n, d)` -> `(n, classes)`.
    pub fn batch_logits(&self, features: &Array2<f32>) -> Array2<f32> {
        use crate::blas::{gemm, Trans};
        let (n, d) = features.dim();
        assert_eq!(d, self.latent_dim());
        let mut out = Array2::zeros((n, self.classes()));
        gemm(
            Trans::No,
            Trans::Yes,
            n,
            self.classes(),
            d,
            1.0f32,
            features.as_slice().unwrap(),
            self.w.as_slice().unwrap(),
            0.0,
            out.as_slice_mut().unwrap(),
        );
        for mut row in out.outer_iter_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v += self.b[(0, k)];
            }
        }
        out
    }
}

/// Independent verification route for the analytic backward pass: central
/// finite differences of the masked loss on a reduced model at f64 precision.
/// Returns the maximum relative error over `sample_count` randomly chosen
/// parameters (spread over all layers).
pub fn gradient_check_max_rel_err(spec: &EncoderSpec, sample_count: usize, seed_val: u64) -> f64 {
    use rand::Rng;

    let model = Autoencoder::<f64>::new(spec, seed_val).expect("valid spec");
    let mut rng = seed::rng(seed_val, "gradcheck", &[]);
    let n = 2usize;
    let s = spec.input_size;
    let x = Array4::from_shape_fn((spec.input_channels, n, s, s), |_| rng.random::<f64>());
    let target = Array4::from_shape_fn((spec.input_channels, n, s, s), |_| rng.random::<f64>());
    // Mixed weight map: some zero-weight pixels, some fractional.
    let wmap = Array2::from_shape_fn((s, s), |_| {
        if rng.random::<f64>() < 0.3 {
            0.0
        } else {
            rng.random::<f64>()
        }
    });

    let loss_of = |m: &Autoencoder<f64>| -> f64 {
        let mut scratch = Scratch::new();
        let (_, dec_tape) = m.forward_train(x.clone(), &mut scratch).unwrap();
        let pred = dec_tape.output();
        let mut total = 0.0;
        for ni in 0..n {
            let p = extract_sample(pred, ni);
            let t = extract_sample(&target, ni);
            total += crate::objective::sample_loss(&p.view(), &t.view(), &wmap.view(), ni)
                .unwrap()
                / n as f64;
        }
        total
    };

    // Analytic gradients.
    let mut scratch = Scratch::new();
    let mut grads = model.grad_store();
    let (enc_tape, dec_tape) = model.forward_train(x.clone(), &mut scratch).unwrap();
    let pred = dec_tape.output();
    let mut dpred = Array4::zeros(pred.dim());
    for ni in 0..n {
        let p = extract_sample(pred, ni);
        let t = extract_sample(&target, ni);
        let g = crate::objective::sample_loss_grad(
            &p.view(),
            &t.view(),
            &wmap.view(),
            1.0 / n as f64,
        );
        for ch in 0..spec.input_channels {
            for y in 0..s {
                for xx in 0..s {
                    dpred[(ch, ni, y, xx)] = g[(ch, y, xx)];
                }
            }
        }
    }
    model.backward(&enc_tape, &dec_tape, dpred, &mut grads, &mut scratch);

    // Sample parameters across all layers proportionally.
    let layer_meta: Vec<(usize, usize, usize)> =
        model.layers().map(|l| (l.id, l.w.len(), l.b.len())).collect();
    let mut picks: Vec<(usize, bool, usize)> = Vec::with_capacity(sample_count);
    for i in 0..sample_count {
        let (id, wlen, blen) = layer_meta[i % layer_meta.len()];
        let in_bias = rng.random::<f64>() < 0.1 && blen > 0;
        let idx = if in_bias {
            rng.random_range(0..blen)
        } else {
            rng.random_range(0..wlen)
        };
        picks.push((id, in_bias, idx));
    }

    let h = 1e-5;
    let mut max_rel = 0.0f64;
    let mut perturbed = model.clone();
    for (id, in_bias, idx) in picks {
        let analytic = {
            let g = grads.layer(id);
            if in_bias {
                g.b[idx]
            } else {
                g.w.as_slice().unwrap()[idx]
            }
        };
        let read_write = |m: &mut Autoencoder<f64>, delta: f64| {
            for layer in m.layers_mut() {
                if layer.id == id {
                    if in_bias {
                        layer.b[idx] += delta;
                    } else {
                        layer.w.as_slice_mut().unwrap()[idx] += delta;
                    }
                }
            }
        };
        read_write(&mut perturbed, h);
        let up = loss_of(&perturbed);
        read_write(&mut perturbed, -2.0 * h);
        let down = loss_of(&perturbed);
        read_write(&mut perturbed, h);
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    max_rel
}

fn extract_sample<T: Scalar>(chunk: &Array4<T>, n: usize) -> Array3<T> {
    let (c, _, h, w) = chunk.dim();
    Array3::from_shape_fn((c, h, w), |(ch, y, x)| chunk[(ch, n, y, x)])
}

#[cfg(test)]
mod tests;
