//! Minimal reverse-mode automatic differentiation over dense `f64`
//! tensors, with support for gradients of gradients.
//!
//! A [`Tape`] records every operation whose operands are attached to it.
//! [`grad`] sweeps the tape in reverse insertion order. Passing
//! `create_graph = true` records the backward computation as well, which
//! is how unrolled inner training loops are differentiated.
//!
//! Tapes are single-threaded (`Rc`-based); run independent tapes on
//! separate threads.

mod backward;
mod kernels;
mod ops;
mod tensor;

pub use backward::grad;
pub use tensor::{Tape, Tensor};
