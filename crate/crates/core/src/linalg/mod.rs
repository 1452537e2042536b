//! Sparse linear algebra used by the conic solver.

pub mod ldl;
pub mod sparse;

pub use ldl::{LdlError, LdlFactor, LdlSymbolic};
pub use sparse::{dot, inf_norm, CscMatrix};
