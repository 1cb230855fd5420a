//! Exact pseudo-rank functions on matricial algebras, matrix-unit stabilization,
//! the Halperin inductive step and finite-stage chain simulation.

pub mod cli;
pub mod error;
pub mod halperin;
pub mod linalg;
pub mod matalg;
pub mod numtheory;
pub mod regular;
pub mod scalar;
pub mod stabilize;
pub mod star;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use scalar::{Field, Scalar};
