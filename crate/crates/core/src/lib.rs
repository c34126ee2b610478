//! Solvers for one-obstacle integro-PDE systems with Lévy jumps.
//!
//! Two independent routes are provided: regression Monte Carlo for the
//! associated reflected BSDE with jumps ([`rbsde`]), and a finite-difference
//! grid solver in one space dimension ([`pide`]). The [`experiments`] module
//! wires both into reproducible, configuration-driven runs.

// `!(x <= y)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::type_complexity)]

pub mod checks;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod forward;
pub mod levy;
pub mod oracle;
pub mod par;
pub mod pide;
pub mod problem;
pub mod quadrature;
pub mod rbsde;
pub mod regression;

pub use error::{Error, Result};
