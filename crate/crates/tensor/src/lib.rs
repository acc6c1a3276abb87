//! Dense tensors with a recorded reverse pass, generic over `f32`/`f64`.

mod error;
mod float;
mod gradcheck;
mod graph;
mod ops;
pub mod opsuite;
mod tensor;

pub use error::{Result, TensorError};
pub use float::Float;
pub use gradcheck::{analytic_gradient, grad_check, grad_compare, numeric_gradient, GradCheck};
pub use graph::{Gradients, Graph, Var};
pub use ops::{bilinear_resize_plain, cosine_sim, Activation, BatchNormStats, ConvGeom, CrossEntropyOut, PoolResize, FLAT_RANGE};
pub use tensor::Tensor;
