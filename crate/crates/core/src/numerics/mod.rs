//! Dense `f64` arrays, 1-D convolution and interpolation kernels, and a small
//! tape-based reverse-mode differentiation engine.

mod container;
mod gradcheck;
mod graph;
mod kernels;
mod params;
mod tensor;

use thiserror::Error;

pub use container::{decode_container, encode_container, read_container, write_container, ContainerError};
pub use gradcheck::{finite_diff_check, GradCheckOptions, GradCheckReport};
pub use graph::{concat_cols, Gradients, Graph, GraphOptions, NllItem, Var};
pub use kernels::{conv1d, conv_transpose1d, interp_linear, matmul, ConvGeometry};
pub use params::{init_normal, Adam, CosineWarmup, ParamSet};
pub use tensor::Tensor;

pub(crate) use graph::softmax_prefix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("unknown parameter `{0}`")]
    MissingParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("negative log-likelihood needs at least one supervised position")]
    EmptyMask,
    #[error("function is not deterministic: {first} then {second}")]
    NonDeterministic { first: f64, second: f64 },
}
