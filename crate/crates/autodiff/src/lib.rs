//! Reverse-mode automatic differentiation over small dense and
//! convolutional networks.
//!
//! Values are evaluated eagerly in `f64`; parameters are stored at `f32`
//! precision in a [`ParamSet`] that also carries Adam state.

pub mod conv;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod tensor;

pub use error::{AutodiffError, Result};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use graph::{Gradients, Graph, Var, LEAKY_SLOPE};
pub use params::{AdamConfig, Binding, Param, ParamSet};
pub use tensor::Tensor;
