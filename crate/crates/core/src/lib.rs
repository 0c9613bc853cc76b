#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Portfolio allocation by tree recursions and shrunk Gauss–Seidel solves.
//!
//! The crate covers the signal-blind baselines (1/N, HRP, Cotton, direct
//! minimum variance), the signal-aware tree passes HRP-μ and HRP-Σμ, the
//! CRISP Gauss–Seidel solver for `P_γ w = μ` with its projected variant, the
//! shrinkage-trajectory analysis, a synthetic covariance laboratory and a
//! Monte Carlo walk-forward harness.

pub mod analysis;
pub mod baseline;
pub mod core_types;
pub mod crisp;
pub mod dendrogram;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod signal_allocators;
pub mod synthetic;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
