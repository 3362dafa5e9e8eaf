//! Tensor substrate: dense arrays, a fixed vocabulary of layers with explicit
//! backward passes, optimizers, and the on-disk tensor container.

pub mod container;
pub mod error;
pub mod layer;
pub mod numdiff;
pub mod ops;
pub mod optim;
pub mod pnm;
pub mod scalar;
pub mod tensor;

pub use error::{CoreError, Result};
pub use layer::{
    BilinearUpsample, ConcatChannels, Conv2d, GlobalAvgPool, Layer, LayerKind, LeakyRelu, Sigmoid, SoftmaxChannels,
};
pub use optim::{poly_lr, Optimizer, OptimizerKind};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

/// Negative-side slope of every leaky-relu in the models.
pub const LEAKY_SLOPE: f64 = 0.2;
