//! KPP front speeds in narrow random channels.
//!
//! A random channel is reduced to a metric graph (spine plus dead-end wings).
//! Hitting-time transforms along the spine come from a Sturm–Liouville ratio
//! recursion; their Lyapunov exponent gives a quenched rate function whose
//! conjugate fixes the asymptotic front speeds. Finite-difference solvers on
//! the graph and on the thin 2D channel, plus a Monte Carlo walker, provide
//! independent cross-checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod channel;
pub mod channel2d;
pub mod error;
pub mod frontpde;
pub mod graph;
pub mod ldp;
pub mod num;
pub mod oracle;
pub mod output;
pub mod profile;
pub mod reaction;
pub mod sturm;
pub mod walker;

pub use error::{Error, Result};
