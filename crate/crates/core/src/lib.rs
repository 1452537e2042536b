//! Local energy market clearing on radial distribution feeders.
//!
//! [`market::run_clearing`] runs the DSO, LMO and prosumer agents to a
//! consensus; [`oracle`] holds the centralized and selfish references.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod dso;
pub mod io;
pub mod linalg;
pub mod lmo;
pub mod market;
pub mod miqp;
pub mod model;
pub mod oracle;
pub mod prosumer;
pub mod socp;
