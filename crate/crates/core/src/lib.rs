pub mod backbone;
pub mod data;
pub mod diagnostics;
pub mod distill;
pub mod error;
pub mod eval;
pub mod io;
pub mod numerics;
pub mod projector;
pub mod trainer;

pub use error::{Error, Result};
