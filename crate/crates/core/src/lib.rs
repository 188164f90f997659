//! Analysis of one-dimensional hyperbolic relaxation systems with
//! characteristic boundaries: assumption checks, the modified Kreiss
//! condition, reduced boundary conditions, boundary layers and a stiff
//! half-line solver for the relaxation limit.

// NaN-rejecting `!(x > 0.0)` guards and index loops over coupled arrays are intended.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod demos;
pub mod error;
pub mod frequency;
pub mod ibvp;
pub mod layer;
pub mod linalg;
pub mod nonlinear;
pub mod random;
pub mod reduced;
pub mod system;

pub use error::{Error, Result};
