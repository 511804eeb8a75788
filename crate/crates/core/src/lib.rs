//! Conditional denoising diffusion on icosahedral spherical meshes, applied
//! to normative modeling of cortical feature maps.
//!
//! The crate is organized bottom-up:
//!
//! - [`mesh`] and [`atlas`]: hierarchical icospheres and ROI parcellations.
//! - [`feature`]: multi-channel per-vertex maps and their file format.
//! - [`nn`]: the spherical UNet (1-ring convolution, prefix pooling,
//!   attention, embeddings) with exact gradients.
//! - [`diffusion`] and [`train`]: cosine schedule, v-parameterization,
//!   ancestral sampling and the training loop.
//! - [`normative`]: normalization, ROI z-scores, spherical
//!   SSIM/MSE, Welch tests, linear SVM with k-fold cross-validation.
//! - [`synth`] and [`dataset`]: a deterministic synthetic cohort and its
//!   on-disk layout.
//! - [`pipeline`] and [`config`]: dataset-level train/reconstruct/score
//!   steps and the run config.
//! - [`cli`]: the `icodiff` command line.

pub mod atlas;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod feature;
pub mod mesh;
pub mod nn;
pub mod normative;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use feature::FeatureMap;
pub use mesh::{build_icosphere, prefix_count, Icosphere};
