//! Dense tensor container and the forward/backward kernels for every layer
//! kind the network uses. All kernels are pure functions: the only state
//! (batch-norm running statistics) is passed in and returned explicitly, so
//! gradient checks and sequential training are bit-reproducible.

pub mod activation;
pub mod affine;
pub mod batchnorm;
pub mod concat;
pub mod conv;
pub mod pool;
pub mod tensor;

#[cfg(test)]
pub(crate) mod test_support;

pub use activation::{add_elementwise, rectify, rectify_grad};
pub use affine::{affine, affine_grad, AffineGrads};
pub use batchnorm::{
    normalize_batch_grad, normalize_batch_infer, normalize_batch_train, BnCache, BnForward, BnGrads,
    BN_EPSILON, BN_MOMENTUM,
};
pub use concat::{concatenate, split};
pub use conv::{conv_output_extent, convolve, convolve_grad, ConvGrads};
pub use pool::{pool_max, pool_max_grad, PoolIndexMap};
pub use tensor::Tensor;
