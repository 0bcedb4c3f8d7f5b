//! Pose-only group activity recognition: a small reverse-mode tensor
//! library, the attention network built on it, dataset handling, and a
//! deterministic training loop.

pub mod data;
pub mod io;
pub mod model;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod verify;

pub use scalar::Scalar;
pub use tensor::{grad_check, GradCheckReport, Gradients, Tape, Tensor, TensorError, Var};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Params32 = model::PogarsParams<f32>;
pub type Params64 = model::PogarsParams<f64>;
