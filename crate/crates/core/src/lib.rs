//! Lightweight single-image super-resolution built on a self-contained tensor
//! and reverse-mode differentiation engine.

pub mod analysis;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use nn::{ModelConfig, ModelParams};
pub use tensor::{ConvSpec, Element, Gradients, Graph, Shape4, Tensor4, Var};
