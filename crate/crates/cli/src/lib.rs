//! Library side of the `ratmix` binary: spec files, operation dispatch and
//! output writing.

pub mod emit;
pub mod ops;
pub mod spec;
