//! Kernel one-class classification with privileged information.
//!
//! This crate implements two classical one-class classifiers — the One-Class
//! SVM (separating hyperplane in feature space) and SVDD (minimum enclosing
//! sphere in feature space) — together with their privileged-information
//! extensions OC-SVM+ and SVDD+, where extra per-pattern features available
//! only at training time are used to model the slack variables.
//!
//! The pieces:
//!
//! - [`kernel`] — Gaussian / linear kernels and Gram matrices
//! - [`qp`] — a dense box-and-equality constrained convex QP solver used for
//!   all four duals, plus a brute-force oracle for testing
//! - [`oneclass`] — One-Class SVM and SVDD training and scoring
//! - [`privileged`] — OC-SVM+ and SVDD+ training, offset recovery from the
//!   KKT conditions, and privileged-slack evaluation
//! - [`synth`] — the three synthetic 2-D benchmark generators and
//!   uniform-box outlier injection
//! - [`eval`] — precision/recall evaluation, k-fold cross validation,
//!   two-stage grid search and the sweep/benchmark experiments
//! - [`io`] — CSV dataset ingestion and JSON model persistence with exact
//!   round-tripping
//!
//! Numeric code is generic over the scalar type via the [`Float`] trait;
//! `f64` aliases for the model types are exported at the crate root.
//!
//! Every model exposes `score(x)` with a single convention: **positive score
//! means anomalous**, regardless of the sign convention of the underlying
//! decision function.

pub mod error;
pub mod eval;
pub mod float;
pub mod io;
pub mod kernel;
pub mod oneclass;
pub mod privileged;
pub mod qp;
pub mod synth;

pub use error::{Error, Result};
pub use float::Float;
pub use kernel::{GramMatrix, KernelKind, KernelSpec};
pub use oneclass::AnomalyScorer;
pub use synth::Dataset;









