//! Dense linear algebra, reverse-mode gradients, a finite-difference oracle,
//! the seeded random stream, and matrix persistence.

mod gradcheck;
pub mod io;
pub mod linalg;
mod matrix;
mod rng;
mod tape;

pub use gradcheck::{finite_diff, max_relative_error};
pub use matrix::{dot, norm, Matrix};
pub use rng::Rng;
pub use tape::{gelu, Tape, Var};

/// Floor added before logarithms and row normalizations.
pub const LOG_FLOOR: f64 = 1e-10;
