//! Neural network building blocks on top of the autodiff tape.
//!
//! All spatial ops take channel-last feature maps `[B, H, W, C]`.

mod activation;
mod attention;
mod conv;
mod norm;
mod pool;

pub use activation::{cross_entropy, gelu, softmax_lastdim};
pub use attention::{linear, msa, msa_with_weights, LinearParams, MsaParams};
pub use conv::{conv2d, conv_out_size, depthwise_conv3x3, Conv2dSpec};
pub use norm::{batch_norm, layer_norm, BatchStats, BN_EPS, LN_EPS};
pub use pool::{avg_pool2x2_s2, max_pool3x3, upsample_nearest2x};
