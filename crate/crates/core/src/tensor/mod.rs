//! Dense matrices, reverse-mode differentiation and the Adam optimizer.

mod adam;
mod matrix;
mod params;
mod tape;

pub use adam::{adam_step, OptimizerState, BETA1, BETA2, EPSILON};
pub use matrix::{
    add_bias, concat_cols, cross_entropy_from_logits, elementwise_mul, matmul, relu, softmax_rows,
    Matrix,
};
pub use params::{GradientSet, ParamId, ParameterSet};
pub use tape::{Adjoints, Tape, Var};
