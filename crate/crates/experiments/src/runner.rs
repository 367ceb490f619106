//! Replica sweeps for each experiment kind.

use msp_core::control::{closed_loop_eval, exact_gain, fit_all, mpc_gain, ControlReport};
use msp_core::lti::{build_rollout_wellspec, kalman_innovations, simulate};
use msp_core::nonlinear::{comparison_replica, KoopmanSystem};
use msp_core::predictors::{
    population_loss_misspec, population_loss_wellspec, Dataset, OptimizerConfig, PredictorClass,
};
use msp_core::rng::{derive_seed, label};
use msp_core::theory::{bias_report, rate_report};
use msp_core::{linalg, LtiSystem};
use rayon::prelude::*;

use crate::config::{BuiltSystem, ExperimentConfig, ExperimentKind};
use crate::error::{Result, RunError};
use crate::records::{at_horizon, sort_records, Record};

pub const EXACT_CLASS: &str = "exact";
pub const FAILED: &str = "failed";

/// Seed of replica `r` at dataset size `n`.
pub fn replica_seed(master: u64, kind: ExperimentKind, n: usize, r: usize) -> u64 {
    derive_seed(master, &[label(kind.as_str()), n as u64, r as u64])
}

/// Per-class reference values for each horizon, indexed like `cfg.horizons`.
type References = Vec<[f64; 3]>;

fn class_index(class: PredictorClass) -> usize {
    match class {
        PredictorClass::SingleStep => 0,
        PredictorClass::MultiStep => 1,
        PredictorClass::Intermediate => 2,
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    opt: OptimizerConfig,
}

struct RowSink<'a> {
    kind: &'a str,
    n: usize,
    replica: usize,
    seed: u64,
    rows: Vec<Record>,
}

impl<'a> RowSink<'a> {
    fn push(&mut self, class: &str, quantity: String, value: f64, theory_ref: Option<f64>) {
        self.rows.push(Record {
            kind: self.kind.to_string(),
            class: class.to_string(),
            n: self.n,
            replica: self.replica,
            seed: self.seed,
            quantity,
            value,
            theory_ref,
        });
    }

    fn fail(&mut self, class: &str, horizon: Option<usize>) {
        let q = horizon.map_or_else(|| FAILED.to_string(), |h| at_horizon(FAILED, h));
        self.push(class, q, 1.0, None);
    }

    fn fail_all(&mut self) {
        for class in PredictorClass::ALL {
            self.fail(class.as_str(), None);
        }
    }
}

/// Runs every replica of the experiment on a pool of `workers` threads and
/// returns the records sorted by `(class, N, replica)`.
pub fn run(cfg: &ExperimentConfig, workers: usize) -> Result<Vec<Record>> {
    cfg.validate()?;
    let system = cfg.build_system()?;
    let ctx = Ctx {
        cfg,
        opt: cfg.optimizer_config(),
    };
    let kind = cfg.kind;
    let mut records = Vec::new();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| RunError::Io(format!("cannot start worker pool: {e}")))?;

    match (&system, kind) {
        (BuiltSystem::Linear(sys), ExperimentKind::BiasVsHorizon) => {
            records.extend(bias_rows(cfg, sys)?);
        }
        (BuiltSystem::Linear(sys), _) => {
            let refs = linear_references(cfg, sys)?;
            if kind == ExperimentKind::LqrWellspec {
                records.extend(exact_control_rows(cfg, sys)?);
            }
            let jobs = jobs(cfg);
            let out: Vec<Vec<Record>> = pool.install(|| {
                jobs.par_iter()
                    .map(|&(n, r)| linear_replica(&ctx, sys, &refs, n, r))
                    .collect()
            });
            records.extend(out.into_iter().flatten());
        }
        (BuiltSystem::Koopman(sys), _) => {
            let jobs = jobs(cfg);
            let out: Vec<Vec<Record>> = pool.install(|| {
                jobs.par_iter()
                    .map(|&(n, r)| koopman_replica(&ctx, sys, n, r))
                    .collect()
            });
            records.extend(out.into_iter().flatten());
        }
    }

    if kind.samples() && records.iter().filter(|r| r.replica_measurement()).all(|r| r.class == EXACT_CLASS) {
        return Err(RunError::Numerical(msp_core::Error::InvalidArgument(
            "every replica failed".to_string(),
        )));
    }
    sort_records(&mut records);
    Ok(records)
}

impl Record {
    /// True for rows that carry a measurement rather than a failure flag.
    pub fn replica_measurement(&self) -> bool {
        crate::records::split_quantity(&self.quantity).0 != FAILED
    }
}

fn jobs(cfg: &ExperimentConfig) -> Vec<(usize, usize)> {
    cfg.dataset_sizes
        .iter()
        .flat_map(|&n| (0..cfg.replicas).map(move |r| (n, r)))
        .collect()
}

/// Reference values attached to replica rows: rates for the fully observed
/// sweep, biases for the misspecified sweep, and the exact controller's
/// clipped cost (slot 0) for the well-specified control sweep.
fn linear_references(cfg: &ExperimentConfig, sys: &LtiSystem) -> Result<References> {
    let mut refs = Vec::new();
    for &h in &cfg.horizons {
        refs.push(match cfg.kind {
            ExperimentKind::WellspecConvergence => {
                let r = rate_report(sys, h, &cfg.mc_config())?;
                [r.ss_rate, r.ms_rate, r.intermediate_rate]
            }
            ExperimentKind::MisspecConvergence => {
                let b = bias_report(sys, h, &cfg.bias_config())?;
                [b.ss_bias, b.ms_bias, b.intermediate_bias]
            }
            ExperimentKind::LqrWellspec => {
                let rep = closed_loop_eval(sys, &exact_gain(sys, h)?, cfg.clip)?;
                [rep.clipped_cost, f64::NAN, f64::NAN]
            }
            _ => [f64::NAN; 3],
        });
    }
    Ok(refs)
}

fn exact_control_rows(cfg: &ExperimentConfig, sys: &LtiSystem) -> Result<Vec<Record>> {
    let mut sink = RowSink {
        kind: cfg.kind.as_str(),
        n: 0,
        replica: 0,
        seed: cfg.seed,
        rows: Vec::new(),
    };
    for &h in &cfg.horizons {
        let rep = closed_loop_eval(sys, &exact_gain(sys, h)?, cfg.clip)?;
        sink.push(EXACT_CLASS, at_horizon("spectral_radius", h), rep.closed_loop_spectral_radius, None);
        sink.push(EXACT_CLASS, at_horizon("clipped_cost", h), rep.clipped_cost, None);
    }
    Ok(sink.rows)
}

fn bias_rows(cfg: &ExperimentConfig, sys: &LtiSystem) -> Result<Vec<Record>> {
    let mut sink = RowSink {
        kind: cfg.kind.as_str(),
        n: 0,
        replica: 0,
        seed: cfg.seed,
        rows: Vec::new(),
    };
    let innov = kalman_innovations(sys)?;
    let radius = msp_core::theory::predictor_spectral_radius(&innov, sys)?;
    sink.push(PredictorClass::SingleStep.as_str(), "predictor_spectral_radius".into(), radius, None);
    for &h in &cfg.horizons {
        let b = bias_report(sys, h, &cfg.bias_config())?;
        for (class, v) in [
            (PredictorClass::SingleStep, b.ss_bias),
            (PredictorClass::MultiStep, b.ms_bias),
            (PredictorClass::Intermediate, b.intermediate_bias),
        ] {
            sink.push(class.as_str(), at_horizon("bias", h), v, None);
        }
    }
    Ok(sink.rows)
}

fn linear_replica(
    ctx: &Ctx,
    sys: &LtiSystem,
    refs: &References,
    n: usize,
    r: usize,
) -> Vec<Record> {
    let cfg = ctx.cfg;
    let seed = replica_seed(cfg.seed, cfg.kind, n, r);
    let mut sink = RowSink {
        kind: cfg.kind.as_str(),
        n,
        replica: r,
        seed,
        rows: Vec::new(),
    };
    let data = match simulate(sys, n, seed) {
        Ok(t) => Dataset::from_trajectory(&t),
        Err(_) => {
            sink.fail_all();
            return sink.rows;
        }
    };
    // Misspecified losses need the innovations form; it is shared by all fits.
    let innov = match cfg.kind {
        ExperimentKind::MisspecConvergence => match kalman_innovations(sys) {
            Ok(i) => Some(i),
            Err(_) => {
                sink.fail_all();
                return sink.rows;
            }
        },
        _ => None,
    };
    for (hi, &h) in cfg.horizons.iter().enumerate() {
        for (class, pred) in fit_all(&data, h, &ctx.opt) {
            let name = class.as_str();
            let reference = refs[hi][class_index(class)];
            let ok = match cfg.kind {
                ExperimentKind::WellspecConvergence => pred
                    .and_then(|p| population_loss_wellspec(&p, sys))
                    .and_then(|loss| {
                        let floor = linalg::frobenius_sq(&build_rollout_wellspec(sys, h)?.gamma_w);
                        Ok((loss, floor))
                    })
                    .map(|(loss, floor)| {
                        sink.push(name, at_horizon("loss", h), loss, None);
                        sink.push(
                            name,
                            at_horizon("scaled_excess_loss", h),
                            n as f64 * (loss - floor),
                            Some(reference),
                        );
                    }),
                ExperimentKind::MisspecConvergence => {
                    let innov = innov.as_ref().expect("computed above");
                    pred.and_then(|p| population_loss_misspec(&p, innov, sys))
                        .map(|loss| sink.push(name, at_horizon("loss", h), loss, Some(reference)))
                }
                ExperimentKind::LqrWellspec | ExperimentKind::SpectralRadiusMisspec => pred
                    .and_then(|p| mpc_gain(&p))
                    .and_then(|g| closed_loop_eval(sys, &g, cfg.clip))
                    .map(|rep: ControlReport| {
                        sink.push(name, at_horizon("spectral_radius", h), rep.closed_loop_spectral_radius, None);
                        sink.push(name, at_horizon("clipped_cost", h), rep.clipped_cost, None);
                        if cfg.kind == ExperimentKind::LqrWellspec {
                            let gap = (rep.clipped_cost - refs[hi][0]).abs();
                            sink.push(name, at_horizon("cost_gap", h), gap, None);
                        }
                    }),
                ExperimentKind::BiasVsHorizon | ExperimentKind::Nonlinear => {
                    unreachable!("not a linear replica kind")
                }
            };
            if ok.is_err() {
                sink.fail(name, Some(h));
            }
        }
    }
    sink.rows
}

fn koopman_replica(ctx: &Ctx, sys: &KoopmanSystem, n: usize, r: usize) -> Vec<Record> {
    let cfg = ctx.cfg;
    let seed = replica_seed(cfg.seed, cfg.kind, n, r);
    let mut sink = RowSink {
        kind: cfg.kind.as_str(),
        n,
        replica: r,
        seed,
        rows: Vec::new(),
    };
    match comparison_replica(sys, &cfg.horizons, n, seed, &ctx.opt) {
        Ok(entries) => {
            for e in entries {
                match e.loss {
                    Ok(v) => sink.push(e.class.as_str(), at_horizon("eval_loss", e.horizon), v, None),
                    Err(_) => sink.fail(e.class.as_str(), Some(e.horizon)),
                }
            }
        }
        Err(_) => sink.fail_all(),
    }
    sink.rows
}
