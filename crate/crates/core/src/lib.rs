//! Stochastic optimal control of an online seller's reputation.
//!
//! A seller shifts a fraction `mu in [-eps, eps]` of resources between
//! advertising (`mu > 0`, builds reputation) and processing (`mu < 0`, sells
//! more now). Revenue accrues at `e^{-rho t} p(mu) h(R)`. The crate provides
//!
//! * [`model`]: price functions, processing rates, reputation SDEs and
//!   validated problem instances;
//! * [`closed_form`]: the separable solution of the power-law/GBM model and
//!   the single-switch objective;
//! * [`hjb`]: explicit finite-difference HJB solvers for both models and the
//!   extracted feedback control;
//! * [`simulate`]: seeded path simulation and Monte-Carlo policy evaluation;
//! * [`export`]: CSV/JSON artifacts.
//!
//! Data-parallel loops run on rayon when the `parallel` feature is enabled
//! (the default); see [`Execution`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod closed_form;
pub mod error;
pub mod export;
pub mod hjb;
pub mod model;
pub mod parallel;
pub mod policy;
pub mod simulate;

pub use error::{Error, FieldError, Result};
pub use model::{
    AnalyticRegime, ControlProblem, GrowthModel, ProblemDocument, ProcessingRate,
    ReputationDynamics,
};
pub use parallel::Execution;
pub use policy::{ControlPolicy, FeedbackPolicy, PulsingPolicy};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
