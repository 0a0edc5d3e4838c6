//! Minimal reverse-mode automatic differentiation over `f64` arrays.
//!
//! Only the operations the counting network needs are provided. Execution is
//! single-threaded and every reduction runs in a fixed order, so repeated
//! evaluations are bit-identical.

mod array;
pub mod check;
mod ops;
mod tape;

pub use array::Array;
pub use tape::{Gradients, Tape, Var};
