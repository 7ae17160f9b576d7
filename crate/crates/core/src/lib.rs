//! Numerical core of the Weaver spatiotemporal-attention stack.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the double-precision types used by the model, data pipeline and CLI.

pub mod attention;
pub mod autodiff;
pub mod data;
pub mod dictionary;
pub mod error;
pub mod kron;
pub mod model;
pub mod nn;
pub mod ops_trait;
pub mod optim;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use autodiff::{
    grad_check, BoundParams, GradCheck, Gradients, ParamGrads, Parameters, Tape, Var,
};
pub use error::{Result, WeaverError};
pub use model::{WeaverConfig, WeaverModel};
pub use ops_trait::TensorOps;
pub use scalar::Scalar;
pub use tensor::DenseTensor;

pub type Tensor = DenseTensor<f64>;
pub type Tensor32 = DenseTensor<f32>;
