//! Tensor engine and network builders.
//!
//! A deliberately small stack: dense f64 NCHW tensors, hand-written forward
//! and backward passes for every op, a U-Net for segmentation and
//! inpainting, and a dense-bottleneck autoencoder whose pooled encoder taps
//! drive the perceptual/style losses. Outputs are bitwise reproducible for a
//! fixed seed at any thread count.

mod adam;
mod lossnet;
mod ops;
mod tensor;
mod unet;

pub use adam::{AdamConfig, AdamState};
pub use lossnet::{FeatureCache, FeatureStack, LossNet, LossNetCache, LossNetConfig};
pub use ops::{
    concat_channels, concat_channels_backward, maxpool2x2, maxpool2x2_backward, mse_loss, relu,
    relu_backward, softmax_channels, softmax_cross_entropy, upsample_nearest2x,
    upsample_nearest2x_backward, Conv2d, Conv2dGrad, Linear, LinearGrad,
};
pub use tensor::Tensor;
pub use unet::{UNet, UNetCache, UNetConfig, UNetGrads};
