//! Dense `f64` arrays with tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node in creation order, which is
//! already a topological order. [`Graph::backward`] walks the tape once in
//! reverse and accumulates adjoints into each node's stored gradient.

mod array;
mod graph;

pub use array::Array;
pub use graph::{Graph, Var, EXP_CLAMP};
