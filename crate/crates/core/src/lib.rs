//! Galerkin-truncated Wishart processes on a separable Hilbert space.
//!
//! Operators are represented by their compressions onto the first `N` vectors
//! of a fixed orthonormal basis. The semigroup `e^{tA}` is stored as a matrix
//! acting on column vectors; the OU factor `Y` is an `α×N` matrix with rows in
//! `H`, and `X = YᵀY`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod expm;
pub mod export;
pub mod feller;
pub mod mc;
pub mod model;
pub mod operator;
pub mod quadrature;
pub mod riccati;
pub mod sim;
pub mod transform;

pub use error::{Result, WishartError};
