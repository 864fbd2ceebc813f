//! Wang-Manchester Lipschitz-bounded networks.
//!
//! Each hidden layer is a 1-Lipschitz "sandwich" built from the Cayley
//! transform of unconstrained `(X, Y)`; scaling the input and the final
//! half-sandwich by `√γ` makes the whole map `γ`-Lipschitz for any
//! parameter values, so training is unconstrained.

mod cayley;
mod network;
mod params;

pub use cayley::{cayley, CayleyPair};
pub use network::{backward, forward, sandwich_forward, PreparedNet};
pub use params::{init_params, param_count, Gradient, LipNetParams, OutputParams, SandwichParams};
