//! Numerical core for multi-frequency phase retrieval in antenna measurements.
//!
//! Everything in this crate is pure computation on heap-allocated dense
//! matrices; it builds without `std`. File formats, the experiment runner and
//! the CLI live in the `multifreq` companion crate.
//!
//! Module map:
//!
//! - [`geometry`]: sampling surfaces, dipole hulls and rings
//! - [`forward`]: Hertzian-dipole fields and forward matrices
//! - [`operators`]: pseudo-inverses, projections and the stacked operators
//! - [`retrieval`]: spectral initialization, Wirtinger descent and the
//!   multi-frequency pipeline
//! - [`diagnostics`]: independent-sample counting, frequency-step analysis and
//!   error metrics
//! - [`sync`]: simulation of the asynchronous receive chain

#![no_std]
// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod consts;
pub mod diagnostics;
mod error;
pub mod forward;
pub mod geometry;
pub mod linalg;
pub mod operators;
pub mod retrieval;
pub mod rng;
pub mod sync;

pub use error::{Error, Result};

pub use nalgebra;
pub use num_complex::Complex64;
