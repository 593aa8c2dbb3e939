//! Dense tensors and reverse-mode automatic differentiation.

mod check;
mod dense;
mod ops;
mod tape;

pub use check::{finite_diff_check, finite_diff_check_many, GradCheckReport};
pub use dense::Tensor;
pub use ops::{broadcast_shape, sigmoid, Binary, Elementwise, Reduce, Unary};
pub use tape::{BackwardCtx, BackwardFn, Gradients, Tape, Var};
