//! Inexact-gradient optimization on the Grassmann manifold, with a
//! reproducible experiment harness for Gaussian image discrimination.
//!
//! The crate splits into a geometry/optimization core and an experiment
//! layer:
//!
//! * [`grassmann`] — points, tangent vectors, the canonical metric, tangent
//!   projection, and the SVD-based exponential map.
//! * [`objective`] — the divergence objective for channelized quadratic
//!   discrimination with its analytic ambient gradient, plus a quadratic
//!   trace objective with a known smoothness bound.
//! * [`oracle`] — gradient oracles with controlled inexactness (exact,
//!   diminishing additive error, relative-bounded error, surrogate
//!   statistics).
//! * [`optimizer`] — fixed-step and backtracking-line-search descent drivers
//!   producing full per-iteration traces.
//! * [`evaluate`] — the generalized-eigenvector analytic optimum,
//!   log-likelihood-ratio scoring, AUC, rate fitting, and the
//!   finite-difference gradient check.
//! * [`simulate`] — Gaussian random-field image simulation, sample
//!   covariance, and shrinkage.
//! * [`config`] / [`experiment`] / [`storage`] — experiment configs with
//!   named presets, the five subcommand pipelines, and artifact formats.

// Validation sites use negated float comparisons (`!(x > 0.0)`) on purpose:
// the negation rejects NaN, which the flipped operator would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod evaluate;
pub mod experiment;
pub mod grassmann;
pub mod objective;
pub mod optimizer;
pub mod oracle;
pub mod simulate;
pub mod storage;

pub use error::{Error, Result};
