//! Minimal dense-tensor engine with reverse-mode automatic differentiation.
//!
//! The engine is deliberately small: contiguous row-major tensors, a
//! define-by-run tape ([`Graph`]) that records one training step at a time,
//! and the handful of primitives a convolutional classifier needs — matmul,
//! NHWC convolution (lowered to matmul via patch extraction), ReLU, batch
//! normalization, pooling, softmax cross-entropy, and SGD with momentum.
//!
//! All operations are single-threaded and accumulate in a fixed order, so a
//! run with the same inputs is bit-for-bit reproducible. The element type is
//! generic over [`Scalar`] (`f32` for training, `f64` for gradient checking).

pub mod checkpoint;
pub mod conv;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod linalg;
pub mod optim;
pub mod scalar;
pub mod tensor;

pub use conv::{conv_output_dim, Padding};
pub use error::NnError;
pub use graph::{BnState, Gradients, Graph, Mode, ValueId};
pub use optim::{cosine_lr, Parameter, SgdMomentum};
pub use scalar::Scalar;
pub use tensor::Tensor;
