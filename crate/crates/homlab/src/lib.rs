//! Finite-element laboratory for the homogenization of singular semilinear
//! elliptic problems on periodically perforated planar domains.
//!
//! The crate builds perforated meshes with critically scaled holes, solves
//! the singular problems on them by regularized continuation, constructs the
//! capacitary corrector and its test-function variant, measures the limit
//! absorption density cell by cell, solves the limit problem against it, and
//! drives parameter sweeps that tabulate every computable convergence
//! indicator.

pub mod corrector;
pub mod domain;
pub mod error;
pub mod fem;
pub mod harness;
pub mod singular;
pub mod truncate;

pub use error::{HomlabError, Stage};
