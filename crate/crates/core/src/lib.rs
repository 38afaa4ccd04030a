//! Robust individualized treatment rules for right-censored survival data.
//!
//! Rules are Gaussian-kernel decision functions `d(x) = sign(f(x))` learned by
//! maximizing either a lower-tail restricted mean survival (the CVaR
//! criterion) or a buffered survival probability (the bPOE criterion), with
//! censoring handled by inverse probability weighting. The nonconvex
//! empirical objectives are minimized by a sampling-based proximal DC
//! algorithm.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod censor;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod kernel;
pub mod learn;
pub mod objective;
pub mod simgen;
pub mod solver;

pub use censor::{fit_cox, fit_km, CensorSurvival, CoxDesign};
pub use data::{Arm, CsvSchema, Dataset, Propensity, Subject};
pub use error::{Error, Result};
pub use kernel::{KernelModel, Policy, SurrogateLoss, TreatmentRule};
pub use objective::{Criterion, DcObjective, Majorant, SampleState};
pub use simgen::{ScenarioId, ScenarioSpec};
pub use solver::{fit_deterministic, fit_sampled, FitResult, SolverConfig};
