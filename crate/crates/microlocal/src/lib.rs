//! Numerical generalized microlocal analysis on dyadic ε-grids and periodic domains.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod calculus;
pub mod error;
pub mod expr;
pub mod fixtures;
pub mod grid;
pub mod hyperbolic;
pub mod nets;
pub mod quantize;
pub mod scenario;
pub mod symbols;
pub mod wavefront;

pub use error::{Error, Result};
