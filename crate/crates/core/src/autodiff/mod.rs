//! Reverse-mode differentiation over a linear tape.
//!
//! Every primitive pushes one node holding its forward value and enough
//! metadata to replay the vector-Jacobian product. `Tape::backward` walks the
//! nodes in reverse insertion order, which is a valid reverse topological
//! order because a node can only reference nodes created before it.

mod gradcheck;
mod ops;
mod tape;

pub use gradcheck::{grad_check, grad_check_inputs, GradCheck};
pub use tape::{Gradients, Tape, Var};
