//! Surrogate-based global optimization on fortified Branin-Hoo test functions.
//!
//! The crate provides:
//!
//! * [`testfuncs`]: the Branin-Hoo function, its 4D sum extension, compact
//!   bump fortification and the labeled optimum catalogs;
//! * [`sampling`]: seeded Latin hypercube and uniform designs;
//! * [`rbf`] and [`rbfopt`]: a multiquadric RBF surrogate and the adaptive
//!   sampling optimizer built on it;
//! * [`ego`]: Gaussian-process regression with expected improvement;
//! * [`localopt`]: bound-constrained BFGS with finite differences, used on
//!   surrogates and to polish final results;
//! * [`stats`] and [`harness`]: failure-probability formulas, run
//!   classification, and parallel replicate campaigns with table rendering.

// Negated comparisons deliberately treat NaN as failing the test.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod cli;
pub mod ego;
pub mod error;
pub mod harness;
pub mod localopt;
pub mod rbfopt;
pub mod rbf;
pub mod run;
pub mod sampling;
pub mod stats;
pub mod testfuncs;

pub use bounds::Bounds;
pub use error::{Error, Result};
pub use run::{EvaluationLog, Phase, RunResult, Termination};
