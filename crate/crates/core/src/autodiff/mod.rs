//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Tape`] is rebuilt for every evaluation (define-by-run). Operations
//! append nodes; [`Tape::backward`] sweeps them in reverse.

mod array;
mod tape;

pub use array::Array;
pub(crate) use array::order_free_sum;
pub use tape::{BinaryOp, Elementwise, Gradients, Tape, UnaryOp, Var};
