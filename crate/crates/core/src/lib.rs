//! Numerical laboratory for rational weak mixing: weight sequences, index
//! sets, renewal sequences, countable-state Markov shifts, correlation
//! diagnostics and a piecewise-affine realization of Markov shifts.

pub mod affine;
pub mod error;
pub mod indexsets;
pub mod markov;
pub mod mixing;
pub mod numeric;
pub mod renewal;
pub mod report;
pub mod weights;

pub use error::{Error, Result};
