//! Reverse-mode automatic differentiation over dense real matrices.
//!
//! The tape is append-only and evaluates eagerly: every constructor runs the
//! forward kernel immediately, so values are available as soon as a node is
//! built and [`Tape::backward`] only has to replay vector-Jacobian products
//! in reverse order. Scalars are 1x1 matrices.
//!
//! One sparse primitive is provided for adjacency-shaped operands
//! ([`Tape::spmm`]), plus an edited variant ([`Tape::spmm_edited`]) that
//! routes gradients to per-pair edge values for straight-through estimation.

mod adam;
mod check;
mod tape;

pub use adam::AdamState;
pub use check::finite_diff_check;
pub use tape::{row_softmax, Gradients, NodeId, Tape};
