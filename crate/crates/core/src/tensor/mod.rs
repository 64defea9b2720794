//! Dense `f64` tensors and a reverse-mode gradient tape.
//!
//! [`Tensor`] is a plain value. Recording a computation means lifting
//! tensors onto a [`Tape`] as [`Var`]s (tracked leaves or constants) and
//! calling ops on the handles; [`Tape::backward`] then returns
//! [`Gradients`] for every tracked leaf.
//!
//! Elementwise binary ops accept equal shapes, a single-element operand,
//! or an operand whose shape is a suffix of the other's (leading-axis
//! broadcast). Anything else is a shape error.

mod dense;
pub mod kernels;
mod tape;

pub use dense::Tensor;
pub use tape::{Gradients, Tape, Var};
