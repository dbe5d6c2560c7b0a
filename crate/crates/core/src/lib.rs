//! Reduced-basis surrogate operators for a parametric diffusion problem.

// `!(x > 0.0)` is the NaN-rejecting check; index loops mirror the element formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod artifacts;
pub mod bench;
pub mod datagen;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod neural;
pub mod pde;
pub mod problem;
pub mod reduced_basis;
pub mod rng;
pub mod sparse_grid;
pub mod surrogate;
pub mod tensor_train;

pub use error::{Result, SurrogateError};
