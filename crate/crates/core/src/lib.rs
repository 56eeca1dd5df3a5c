//! Simulation and analysis engine for trial-within-cohorts (TwiCs) designs.
//!
//! The pipeline runs bottom-up:
//!
//! * [`population`] generates patients with both potential outcomes and a
//!   latent acceptance draw, and computes estimand truth by brute force.
//! * [`cohort`] holds the registry and the staged-consent state machine.
//! * [`randomization`] implements the sampling approaches and allocators.
//! * [`trial`] realizes offers, refusals and outcomes.
//! * [`estimators`] provides the estimand panel (offered-treatment ITT,
//!   per-protocol, Wald, two-stage IV, propensity accepter analysis).
//! * [`design`] holds dilution-aware sample-size, power and re-estimation
//!   calculators.
//! * [`scenario`] ties it together: configs, presets, replicated runs and
//!   reports.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cohort;
pub mod design;
pub mod error;
pub mod estimators;
pub mod exec;
pub mod population;
pub mod randomization;
pub mod scenario;
pub mod seed;
pub mod stats;
pub mod trial;

pub use error::{Error, Result};
pub use exec::Execution;
