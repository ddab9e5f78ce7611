//! Small numerical kernels shared by the solvers.

pub mod cheb;
pub mod ode;
pub mod quad;
pub mod root;
pub mod stats;
