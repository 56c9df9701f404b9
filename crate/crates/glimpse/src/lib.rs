//! Self-supervised representation learning from partial views.
//!
//! `glimpse` implements a masked-image-modeling pipeline built around the idea
//! that focused vision (a sharp fovea, a degraded or hidden periphery) defines
//! a generative pretraining task: reconstruct the hidden part of the image and
//! learn object representations as a side effect.
//!
//! The crate is organized along the pipeline:
//!
//! * [`imaging`] — masking transforms. Every strategy returns the transformed
//!   image together with a [`imaging::LossWeightMap`] marking where the
//!   reconstruction error counts.
//! * [`dataio`] — STL-10 binary ingestion, crop augmentation, and
//!   foreground-confidence mask handling.
//! * [`model`] — the residual convolutional autoencoder (96×96×3 ⇄ 12×12×128)
//!   and the linear probe head.
//! * [`objective`] — the area-normalized masked reconstruction loss and
//!   foreground weighting.
//! * [`training`] — the seeded pretraining loop, masking-ratio sweeps, and
//!   checkpoint selection.
//! * [`evaluation`] — linear probing, pixel/random baselines, the latent
//!   covariance (decorrelation) metric, and masked reconstruction error.
//! * [`cli`] — the config-driven command-line entry point and figure emission.
//!
//! The narrative guide lives in `book/` at the repository root; its code
//! snippets are compiled and run as doctests by the `guide` crate.

pub mod blas;
pub mod cli;
pub mod dataio;
pub mod evaluation;
pub mod imaging;
pub mod model;
pub mod nn;
pub mod objective;
pub mod seed;
pub mod synth;
pub mod training;

pub use imaging::{ImageBuffer, LossWeightMap, MaskPlan, MaskStrategy};
