//! Constraint management for discrete-time MIMO systems with reference
//! governors.
//!
//! The crate builds maximal constraint-admissible sets for stable LTI
//! systems, runs scalar and vector reference governors against them, and
//! provides input/output decoupling (both transfer-function and state
//! feedback based) so multi-input plants can be governed one channel at a
//! time. A simulation harness with a scenario file format, CSV trace export,
//! and timing benchmarks ties the pieces together; the same functionality is
//! exposed through a small command-line front end.
//!
//! Layout:
//! - [`sys`]: polynomials, rational transfer matrices, state-space models,
//!   minimal realization, norms.
//! - [`polytope`]: H-representation polytopes, boxes, redundancy removal,
//!   Monte Carlo volume, and the LP/QP solvers used throughout.
//! - [`mas`]: maximal admissible (output-constraint invariant) sets, also in
//!   disturbed and parameter-uncertain variants.
//! - [`governor`]: scalar and vector reference governor steps.
//! - [`decouple`]: transfer-function decoupling filters and
//!   Falb--Wolovich state-feedback decoupling.
//! - [`drg`]: decoupled reference governor pipelines (filter-based and
//!   feedback-based), observers, and non-square extensions.
//! - [`harness`]: scenario descriptions, simulation traces, benchmarks, and
//!   the CLI.

pub mod decouple;
pub mod drg;
mod error;
pub mod governor;
pub mod harness;
pub mod mas;
pub mod polytope;
pub mod sys;

pub use error::{Error, Result};
