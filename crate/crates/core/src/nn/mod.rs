//! Minimal trainable network kernel: layers with hand-written backward passes,
//! mean-absolute-error loss and the Adam optimizer.

mod adam;
mod batchnorm;
mod conv;
mod dense;
mod gemm;
mod layer;
mod loss;
mod lstm;
mod network;
mod param;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use batchnorm::{BatchNorm, BATCHNORM_EPSILON, BATCHNORM_MOMENTUM};
pub use conv::{Conv1d, MaxPool1d, Padding};
pub use dense::Dense;
pub use layer::{Dropout, Flatten, Init, Layer, LayerSpec, Mode, Relu};
pub use loss::mae_loss;
pub use lstm::Lstm;
pub use network::{Network, NetworkState, Regularization};
pub use param::Param;
pub use tensor::Tensor;
