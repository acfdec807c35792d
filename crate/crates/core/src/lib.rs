//! Dual-prediction proxy solvers for parametric constrained optimization.

pub mod checks;
pub(crate) mod codec;
pub mod error;
pub mod harness;
pub mod inner_solver;
pub mod lagrangian;
pub mod metrics;
pub mod neural;
pub mod oracle;
pub mod problems;
pub mod training;

pub use error::{DpxError, Result};
