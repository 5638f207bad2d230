//! Minimal differentiable layer stack: 3×3 convolution, batch
//! normalization, ReLU, MSE loss and Adam.

mod adam;
mod batchnorm;
mod conv;
mod gradcheck;
mod loss;
mod network;
mod tensor;

pub use adam::AdamState;
pub use batchnorm::{
    batchnorm, batchnorm_backward, BatchNormLayer, BnStats, Mode, BN_EPSILON, BN_MOMENTUM,
};
pub use conv::{conv2d, conv2d_backward, ConvGrads, ConvLayer, KERNEL};
pub use gradcheck::{
    analytic_grads, grad_check, grad_check_against, GradCheckOptions, GradCheckReport,
};
pub use loss::mse_loss;
pub use network::{Block, Grads, Network, Tape};
pub use tensor::{Real, Tensor4};
