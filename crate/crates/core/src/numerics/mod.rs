//! Dense 64-bit tensors and the hand-differentiated operations the policy
//! network is built from.

pub mod activation;
pub mod conv;
mod gemm;
pub mod gradcheck;
pub mod layers;
pub mod param;
pub mod pool;
pub mod tensor;
pub mod upsample;

pub use activation::{activation, activation_backward, sigmoid, srelu, Activation};
pub use conv::{conv2d, conv2d_backward, Conv2d, ConvGrads, ConvSpec};
pub use gradcheck::{
    grad_check, grad_check_sampled, hash_threshold, relative_error, Differentiable,
    GradCheckReport, ParameterCheck,
};
pub use layers::{ChannelAffine, Linear};
pub use param::{Parameter, ParameterSet};
pub use pool::{global_avg_pool, global_avg_pool_backward, max_pool2x2, max_pool2x2_backward};
pub use tensor::DenseTensor;
pub use upsample::{bilinear_upsample, bilinear_upsample_backward};
