//! Delay-gated recurrent networks.
//!
//! The crate is split by concern:
//!
//! - [`numerics`]: dense vectors/matrices, activations and matrix norms.
//! - [`cells`]: the delay cell family (gated delay cell with weighted
//!   feedback, simple delay GRU, linear delayed RNN) behind the
//!   [`cells::DelayCell`] trait and a name registry.
//! - [`bptt`]: reverse-mode gradients through the unrolled graph including the
//!   delay jump connections, state Jacobians and finite-difference checks.
//! - [`dde`]: fixed-step method-of-steps integration for constant-delay DDEs
//!   and the dataset generators built on it.
//! - [`training`]: datasets, Adam and the training / ablation loops.
//! - [`verify`]: randomized verification batteries for the gradient formulas,
//!   state and gradient bounds, the Lipschitz bound and integrator order.

pub mod bptt;
pub mod cells;
pub mod config;
pub mod dde;
mod error;
pub mod io;
pub mod numerics;
pub mod rng;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
