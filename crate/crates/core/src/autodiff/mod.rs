//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! The operator set is closed: matmul, add, elementwise and row-broadcast
//! products, column concat/slice/repeat/block-sum, row gather and
//! scatter-add, relu, leaky-relu, sigmoid, log, sqrt, row and segment
//! softmax, segment normalization, layer norm, dropout, sum/mean reductions,
//! and a fused weighted binary cross-entropy. There is no general
//! broadcasting.

mod gradcheck;
mod graph;
mod matrix;

pub use gradcheck::{compare_gradients, grad_check, relative_error, Coordinate, GradCheckReport, DEFAULT_EPS};
pub use graph::{segment_softmax_values, weighted_bce_value, Graph, Indices, Mode, Segments, Var, PROB_CLAMP};
pub use graph::sigmoid;
pub use matrix::Matrix;
