//! Variational longitudinal distributed lag models (LDLMs).
//!
//! Outcomes measured repeatedly on the same subjects are regressed on a
//! window of lagged exposures. The lag curves are expanded in penalized
//! B-splines, subject-level variation is captured by either a random lag
//! curve or a random intercept, and the posterior is approximated by
//! mean-field variational Bayes.
//!
//! The crate is organised bottom-up:
//!
//! - [`basis`]: B-spline bases and weighted difference penalties.
//! - [`data_model`]: datasets, model configuration and design matrices.
//! - [`vb`]: coordinate-ascent fitting and the variational lower bound.
//! - [`criteria`]: variational AIC and random-effect selection rules.
//! - [`inference`]: difference curves, interval estimates and the global
//!   smoother-based chi-squared test.
//! - [`simstudy`]: synthetic data generation and replicated experiments.
//! - [`special`]: digamma, log-gamma, incomplete gamma and normal tails.

pub mod basis;
pub mod criteria;
pub mod data_model;
mod error;
pub mod inference;
pub mod simstudy;
pub mod special;
pub mod vb;

pub use error::{LdlmError, Result};
