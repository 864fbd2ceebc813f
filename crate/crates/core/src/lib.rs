//! Model-free synthesis of Kazantzis-Kravaris/Luenberger observers.
//!
//! A stable linear filter turns the plant output into observer states `z`;
//! a Lipschitz-bounded network trained on simulated `(z, x)` pairs maps them
//! back to state estimates. The crate covers the whole chain:
//!
//! - [`numcore`]: small dense linear algebra and seeded randomness
//! - [`dynamics`]: plant models, RK4 simulation, measurement noise
//! - [`observer`]: the linear filter and paired datasets
//! - [`lipnet`]: the Wang-Manchester network, forward and gradients
//! - [`training`]: minibatch SGD
//! - [`analysis`]: H₂ norm, Lipschitz estimates, the generalization bound, sweeps

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod dynamics;
mod error;
pub mod io;
pub mod lipnet;
pub mod numcore;
pub mod observer;
pub mod training;

pub use error::{Error, Result};
