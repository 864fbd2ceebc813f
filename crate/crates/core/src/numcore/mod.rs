//! Dense linear algebra and seeded randomness shared by the rest of the crate.

mod linalg;
mod matrix;
mod rng;
mod spectral;

pub use linalg::{
    characteristic_polynomial, is_hurwitz, mat_inverse, solve, solve_lyapunov, Lu, PIVOT_TOLERANCE,
};
pub use matrix::{dist2, dot, norm2, Matrix};
pub use rng::{gaussian, RngState};
pub use spectral::spectral_norm;
