//! Dense tensors with reverse-mode automatic differentiation, the handful of
//! operations the classifier needs (matrix products, masked softmax, layer
//! normalization, valid convolution, max-over-time pooling, the two losses),
//! Adam with bias correction, and a finite-difference gradient checker.
//!
//! Everything is CPU-only and single-threaded; determinism is part of the
//! contract, not an optimization setting.

mod gradcheck;
mod optim;
mod tensor;

pub use gradcheck::{finite_difference_check, GradCheckReport, ParamCheck};
pub use optim::{adam_step, AdamState, Parameter};
pub use tensor::{
    binary_cross_entropy_loss, concat_cols, concat_rows, concat_scalars, cross_entropy_loss,
    embedding_lookup, no_grad, sigmoid, softmax_probs, BoolMat, Scalar, Tensor, TensorError,
};
