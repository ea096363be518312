//! Tensors, reverse-mode differentiation, seeded randomness and the
//! finite-difference gradient oracle.

mod fd;
mod rng;
mod tape;
mod tensor;

pub use fd::{finite_diff_grad, relative_error};
pub use rng::Rng;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
