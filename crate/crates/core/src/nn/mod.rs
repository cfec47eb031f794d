//! Minimal CPU layers with hand-written backward passes.
//!
//! Every layer exposes an inference `forward` and a `forward_train` that
//! returns the cache its `backward` consumes. Parameter gradients accumulate
//! into [`Param::grad`] until the optimizer step clears them.

mod adam;
mod block;
mod conv;
mod norm;
mod ops;
mod param;
pub mod state;

pub use adam::Adam;
pub use block::{ConvBnRelu, ConvBnReluCache};
pub use conv::Conv2d;
pub use norm::{BatchNorm2d, BatchNormCache};
pub use ops::{
    max_pool2, max_pool2_backward, relu_backward, relu_inplace, sigmoid, softplus,
    upsample2_bilinear, upsample2_bilinear_backward, PoolIndices,
};
pub use param::{Module, Param};

/// Whether batch normalization uses batch statistics or running estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
