//! Single-step, multi-step and intermediate predictors for partially and
//! fully observed linear systems.
//!
//! The crate covers simulation, least-squares and rollout-structured fits,
//! closed-form asymptotic rates and biases, model predictive control gains
//! built from fitted predictors, and a Koopman-lifted nonlinear benchmark.

pub mod control;
pub mod error;
pub mod linalg;
pub mod lti;
pub mod nonlinear;
pub mod predictors;
pub mod rng;
pub mod systems;
pub mod theory;

pub use error::{Error, Result};
pub use linalg::Mat;
pub use lti::{InnovationsForm, LtiSystem, Trajectory};
