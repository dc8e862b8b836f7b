//! Minimal dense tensor engine with reverse-mode differentiation.
//!
//! Everything is `f64`. The op set is exactly what a path-encoding LSTM with
//! additive attention and a sigmoid classifier needs: linear/matmul, add,
//! scale, column concat, transpose, embedding lookup, a fused LSTM cell,
//! sigmoid, tanh, (masked) softmax and binary cross-entropy.

mod adam;
pub mod checkpoint;
mod error;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use error::{CheckpointError, TensorError};
pub use gradcheck::{grad_check, grad_check_report, op_suite, relative_error, GradCheckReport, GRAD_FLOOR, SUITE_EPS};
pub use params::ParamStore;
pub use tape::{Tape, Var, BCE_EPS};
pub use tensor::Tensor;
