//! Closed-form theory table for the configured system.

use std::fmt::Write;

use msp_core::lti::kalman_innovations;
use msp_core::predictors::PredictorClass;
use msp_core::theory::{bias_report, rate_report};

use crate::config::{BuiltSystem, ExperimentConfig};
use crate::error::{Result, RunError};
use crate::records::{at_horizon, Record};

pub const ALL_CLASSES: &str = "all";

/// Rates (fully observed) or biases (partially observed, no inputs) for each
/// configured horizon, the spectral radius of the limiting single-step
/// predictor, and a 0/1 ordering flag per horizon. Rate orderings allow
/// three standard errors on the estimated intermediate rate.
pub fn theory_report(cfg: &ExperimentConfig) -> Result<Vec<Record>> {
    let sys = match cfg.build_system()? {
        BuiltSystem::Linear(sys) => sys,
        BuiltSystem::Koopman(_) => {
            return Err(RunError::config("no closed-form theory for the nonlinear system"));
        }
    };
    let mut rows = Vec::new();
    let mut push = |class: &str, quantity: String, value: f64| {
        rows.push(Record {
            kind: cfg.kind.as_str().to_string(),
            class: class.to_string(),
            n: 0,
            replica: 0,
            seed: cfg.seed,
            quantity,
            value,
            theory_ref: None,
        })
    };
    let (ss, ms, im) = (
        PredictorClass::SingleStep.as_str(),
        PredictorClass::MultiStep.as_str(),
        PredictorClass::Intermediate.as_str(),
    );
    if sys.is_fully_observed() {
        // The single-step limit is the true transition.
        push(ss, "predictor_spectral_radius".into(), msp_core::linalg::spectral_radius(sys.a())?);
        for &h in &cfg.horizons {
            let r = rate_report(&sys, h, &cfg.mc_config())?;
            push(ss, at_horizon("rate", h), r.ss_rate);
            push(ms, at_horizon("rate", h), r.ms_rate);
            push(im, at_horizon("rate", h), r.intermediate_rate);
            push(im, at_horizon("rate_stderr", h), r.intermediate_rate_stderr);
            push(ALL_CLASSES, at_horizon("ordering", h), f64::from(u8::from(r.ordering_holds(3.0))));
        }
    } else {
        if sys.du() > 0 {
            return Err(RunError::config(
                "biases are only available for partially observed systems without inputs",
            ));
        }
        let innov = kalman_innovations(&sys)?;
        push(
            ss,
            "predictor_spectral_radius".into(),
            msp_core::theory::predictor_spectral_radius(&innov, &sys)?,
        );
        for &h in &cfg.horizons {
            let b = bias_report(&sys, h, &cfg.bias_config())?;
            push(ss, at_horizon("bias", h), b.ss_bias);
            push(ms, at_horizon("bias", h), b.ms_bias);
            push(im, at_horizon("bias", h), b.intermediate_bias);
            push(ALL_CLASSES, at_horizon("ordering", h), f64::from(u8::from(b.ordering_holds())));
        }
    }
    Ok(rows)
}

pub fn format_theory(rows: &[Record]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<13} {:<28} {:>16}", "class", "quantity", "value");
    for r in rows {
        let _ = writeln!(out, "{:<13} {:<28} {:>16.8}", r.class, r.quantity, r.value);
    }
    out
}
