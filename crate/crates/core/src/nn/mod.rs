//! Layer primitives with hand-written forward and reverse passes.

mod activation;
mod batchnorm;
mod conv;
pub(crate) mod gemm;
mod linear;
mod loss;
mod pool;

pub use activation::{activation, activation_backward, Activation};
pub use batchnorm::{
    batchnorm2d, batchnorm2d_backward, BatchStats, BnCache, BnForward, BnGrad, Mode, RunningStats, BN_EPS, BN_MOMENTUM,
};
pub use conv::{conv2d, conv2d_backward, conv2d_macs, ConvGeometry, ConvGrad};
pub use linear::{linear, linear_backward, LinearGrad};
pub use loss::{argmax_rows, softmax_cross_entropy, LossOutput};
pub use pool::{maxpool2d, maxpool2d_backward, PoolForward};

use crate::tensor::Tensor4;

/// Backward result of a single layer: input gradient plus flattened parameter gradient.
#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub grad_input: Tensor4,
    pub grad_params: Vec<f64>,
}
