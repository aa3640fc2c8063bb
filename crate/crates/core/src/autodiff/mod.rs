//! Minimal reverse-mode differentiation engine.
//!
//! Values are stored in `f64`. A [`Var`] records the operation that produced
//! it; calling [`Var::backward`] on a scalar walks the recorded graph in
//! reverse topological order and accumulates gradients into every trainable
//! leaf. Layers built on top live in [`crate::nn`].

mod linalg;
mod nnops;
mod ops;
mod var;

pub use nnops::{sinusoidal_table, BatchMoments};
pub use ops::{concat, stack};
pub use var::{no_grad, Var};

#[allow(unused_imports)]
pub(crate) use linalg::gemm;
