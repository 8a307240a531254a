//! Differentiable primitives. Every forward op has a matching backward that
//! returns gradients for its inputs and parameters.

mod activation;
mod conv;
mod norm;
mod pool;
mod upsample;

pub use activation::{pointwise, pointwise_backward, sigmoid, softmax_channels, Activation};
pub use conv::{conv2d, conv2d_backward, conv2d_output_dims, Padding};
pub use norm::{batch_norm_backward, batch_norm_forward, batchnorm, BnCache, Phase};
pub use pool::{maxpool2, maxpool2_backward, PoolIndices};
pub use upsample::{axis_taps, bilinear_upsample, bilinear_upsample_backward, Tap, SUPPORTED_FACTORS};
