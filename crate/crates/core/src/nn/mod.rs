//! Spherical UNet denoiser: operators, parameters, forward pass, gradients.

pub mod ops;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod unet;

pub use ops::{pool, ring_conv, time_embedding, unpool};
pub use params::{DenoiserConfig, DenoiserParams, Layout, ParamSpec};
pub use tensor::{Mat, Real};
pub use unet::{
    condition_embedding, denoiser_forward, denoiser_forward_batch, loss_and_grad,
    loss_and_grad_with, Conditioning, ForwardInput, TrainExample,
};
