//! Minimal CPU neural-network toolkit with hand-written backward passes.

mod activation;
mod adam;
mod batchnorm;
mod bcnn;
pub mod checkpoint;
mod conv;
mod linear;
mod tensor;

pub use activation::{LeakyRelu, LeakyReluTape};
pub use adam::{Adam, AdamConfig};
pub use batchnorm::{BatchNorm2d, BatchNormTape};
pub use bcnn::{
    build_bcnn, image_grad_to_samples, images_from_samples, signal_to_image, Bcnn, BcnnSpec,
    BcnnTape, Layer, STANDARD_STRIDES,
};
pub use conv::{conv2d_forward, Conv2d, ConvTape};
pub use linear::{Linear, LinearTape};
pub use tensor::Tensor;

/// Whether batchnorm uses batch statistics (and updates running ones).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
