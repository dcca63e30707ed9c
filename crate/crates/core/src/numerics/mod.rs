//! Dense matrices, the Adam optimizer, seeded random streams and the
//! finite-difference gradient oracle used across the crate.
//!
//! Parameters are generic over [`Real`] so training runs in `f32` while the
//! gradient-check suite instantiates the same code in `f64`.

mod adam;
mod gradcheck;
mod matrix;
mod rng;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::finite_diff_check;
pub use matrix::{cmp_desc, dot, Matrix, Real};
pub use rng::{rng_draw_categorical, RngStream, StreamTag};
