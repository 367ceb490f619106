//! Experiment configuration, read from TOML.
//!
//! ```toml
//! kind = "wellspec_convergence"
//! seed = 1
//! replicas = 300
//! dataset_sizes = [1000, 2000, 3000]
//! horizons = [5]
//!
//! [system]
//! model = "benchmark"
//! a = 0.5
//! ```
//!
//! Unknown keys are rejected everywhere.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use msp_core::linalg::Mat;
use msp_core::nonlinear::KoopmanSystem;
use msp_core::predictors::OptimizerConfig;
use msp_core::theory::{BiasOptConfig, McConfig};
use msp_core::{systems, LtiSystem};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RunError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    WellspecConvergence,
    MisspecConvergence,
    BiasVsHorizon,
    LqrWellspec,
    SpectralRadiusMisspec,
    Nonlinear,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::WellspecConvergence,
        ExperimentKind::MisspecConvergence,
        ExperimentKind::BiasVsHorizon,
        ExperimentKind::LqrWellspec,
        ExperimentKind::SpectralRadiusMisspec,
        ExperimentKind::Nonlinear,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::WellspecConvergence => "wellspec_convergence",
            ExperimentKind::MisspecConvergence => "misspec_convergence",
            ExperimentKind::BiasVsHorizon => "bias_vs_horizon",
            ExperimentKind::LqrWellspec => "lqr_wellspec",
            ExperimentKind::SpectralRadiusMisspec => "spectral_radius_misspec",
            ExperimentKind::Nonlinear => "nonlinear",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentKind::WellspecConvergence => {
                "fully observed: N-scaled excess loss of each predictor against its asymptotic rate"
            }
            ExperimentKind::MisspecConvergence => {
                "partially observed: population loss of each predictor against its bias"
            }
            ExperimentKind::BiasVsHorizon => {
                "partially observed: closed-form biases over a range of horizons (no sampling)"
            }
            ExperimentKind::LqrWellspec => {
                "fully observed: clipped closed-loop cost of MPC gains from fitted predictors"
            }
            ExperimentKind::SpectralRadiusMisspec => {
                "partially observed with inputs: closed-loop spectral radius of MPC gains"
            }
            ExperimentKind::Nonlinear => {
                "Koopman-lifted nonlinear system: held-out multi-step error of each predictor"
            }
        }
    }

    /// Whether the kind simulates datasets (and so needs dataset sizes).
    pub fn samples(self) -> bool {
        self != ExperimentKind::BiasVsHorizon
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| RunError::config(format!("unknown experiment kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    /// Two-state benchmark `A = [[a, 1], [0, 0.75]]`. Fully observed with
    /// input `[0, 1]ᵀ` for the fully observed kinds; first coordinate observed
    /// with unit sensor noise otherwise. `input_map` sets the actuated input
    /// of the partially observed control kind.
    Benchmark {
        a: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        input_map: Option<[f64; 2]>,
    },
    /// Jordan block with a repeated pole at 0.9, first coordinate observed.
    Jordan,
    /// Explicit matrices, each given as a list of rows. `b` and `d_v` may be
    /// omitted for zero-width maps.
    Matrices {
        a: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b: Option<Vec<Vec<f64>>>,
        b_w: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        d_v: Option<Vec<Vec<f64>>>,
    },
    /// Koopman-lifted nonlinear system; `observe` is `"full"` or `"q"`.
    Koopman {
        mu: f64,
        lambda: f64,
        sigma_w: f64,
        #[serde(default)]
        sigma_v: f64,
        observe: Observation,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observation {
    Full,
    Q,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSettings {
    pub step_size: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub polish_iters: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            step_size: 1e-2,
            max_iters: 10_000,
            grad_tol: 1e-8,
            polish_iters: 200,
        }
    }
}

impl From<OptimizerSettings> for OptimizerConfig {
    fn from(s: OptimizerSettings) -> Self {
        OptimizerConfig {
            step_size: s.step_size,
            max_iters: s.max_iters,
            grad_tol: s.grad_tol,
            polish_iters: s.polish_iters,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloSettings {
    pub samples: usize,
    pub burn_in: usize,
    pub max_lag: usize,
    pub batches: usize,
}

impl Default for MonteCarloSettings {
    fn default() -> Self {
        let d = McConfig::default();
        Self {
            samples: d.samples,
            burn_in: d.burn_in,
            max_lag: d.max_lag,
            batches: d.batches,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiasSettings {
    pub extra_starts: usize,
    pub start_scale: f64,
}

impl Default for BiasSettings {
    fn default() -> Self {
        let d = BiasOptConfig::default();
        Self {
            extra_starts: d.extra_starts,
            start_scale: d.start_scale,
        }
    }
}

fn default_replicas() -> usize {
    300
}

fn default_horizons() -> Vec<usize> {
    vec![5]
}

fn default_clip() -> f64 {
    msp_core::control::DEFAULT_CLIP
}

pub const DEFAULT_DATASET_SIZES: [usize; 6] = [100, 250, 500, 1000, 2000, 3000];

fn default_sizes() -> Vec<usize> {
    DEFAULT_DATASET_SIZES.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default = "default_sizes")]
    pub dataset_sizes: Vec<usize>,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<usize>,
    /// Clipping level of the closed-loop cost.
    #[serde(default = "default_clip")]
    pub clip: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub system: SystemSpec,
    #[serde(default)]
    pub optimizer: OptimizerSettings,
    #[serde(default)]
    pub monte_carlo: MonteCarloSettings,
    #[serde(default)]
    pub bias: BiasSettings,
}

/// The system an experiment runs on.
#[derive(Debug, Clone)]
pub enum BuiltSystem {
    Linear(LtiSystem),
    Koopman(KoopmanSystem),
}

fn matrix(name: &str, rows: &[Vec<f64>], expected_rows: Option<usize>) -> Result<Mat> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(RunError::config(format!("`{name}` has rows of unequal length")));
    }
    if let Some(n) = expected_rows {
        if rows.is_empty() {
            return Ok(Mat::zeros(n, 0));
        }
    }
    Ok(Mat::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| RunError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        self.optimizer.into()
    }

    pub fn mc_config(&self) -> McConfig {
        McConfig {
            samples: self.monte_carlo.samples,
            burn_in: self.monte_carlo.burn_in,
            max_lag: self.monte_carlo.max_lag,
            batches: self.monte_carlo.batches,
            seed: msp_core::rng::derive_seed(self.seed, &[msp_core::rng::label("monte_carlo")]),
        }
    }

    pub fn bias_config(&self) -> BiasOptConfig {
        BiasOptConfig {
            extra_starts: self.bias.extra_starts,
            start_scale: self.bias.start_scale,
            seed: msp_core::rng::derive_seed(self.seed, &[msp_core::rng::label("bias_starts")]),
            optimizer: self.optimizer_config(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicas == 0 {
            return Err(RunError::config("replicas must be at least 1"));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(RunError::config("horizons must be a nonempty list of positive integers"));
        }
        if self.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(RunError::config("horizons must be strictly increasing"));
        }
        if self.kind.samples() {
            if self.dataset_sizes.is_empty() {
                return Err(RunError::config("dataset_sizes must not be empty"));
            }
            if self.dataset_sizes.windows(2).any(|w| w[0] >= w[1]) {
                return Err(RunError::config("dataset_sizes must be strictly increasing"));
            }
            let h_max = *self.horizons.last().expect("checked nonempty");
            if self.dataset_sizes[0] < h_max + 2 {
                return Err(RunError::config(format!(
                    "dataset sizes must be at least H + 2 = {}",
                    h_max + 2
                )));
            }
        }
        if !(self.clip.is_finite() && self.clip > 0.0) {
            return Err(RunError::config("clip must be positive and finite"));
        }
        if self.workers == Some(0) {
            return Err(RunError::config("workers must be at least 1"));
        }
        let o = &self.optimizer;
        if !(o.step_size.is_finite() && o.step_size > 0.0) || o.grad_tol.is_nan() || o.grad_tol < 0.0 {
            return Err(RunError::config("optimizer step_size must be positive and grad_tol nonnegative"));
        }
        let mc = &self.monte_carlo;
        if mc.batches < 2 || mc.samples < mc.batches {
            return Err(RunError::config("monte_carlo needs samples ≥ batches ≥ 2"));
        }
        if !(self.bias.start_scale.is_finite() && self.bias.start_scale >= 0.0) {
            return Err(RunError::config("bias start_scale must be nonnegative"));
        }
        self.build_system().map(|_| ())
    }

    /// Constructs the system and checks it suits the experiment kind.
    pub fn build_system(&self) -> Result<BuiltSystem> {
        use ExperimentKind::*;
        let kind = self.kind;
        let invalid = |e: msp_core::Error| RunError::config(format!("invalid system: {e}"));
        let linear = match &self.system {
            SystemSpec::Koopman {
                mu,
                lambda,
                sigma_w,
                sigma_v,
                observe,
            } => {
                if kind != Nonlinear {
                    return Err(RunError::config(format!("a koopman system cannot run `{kind}`")));
                }
                let sys = match observe {
                    Observation::Full => {
                        if *sigma_v != 0.0 {
                            return Err(RunError::config("full observation takes no sensor noise"));
                        }
                        KoopmanSystem::fully_observed(*mu, *lambda, *sigma_w)
                    }
                    Observation::Q => KoopmanSystem::q_observed(*mu, *lambda, *sigma_w, *sigma_v),
                }
                .map_err(invalid)?;
                return Ok(BuiltSystem::Koopman(sys));
            }
            _ if kind == Nonlinear => {
                return Err(RunError::config("the nonlinear experiment needs a koopman system"));
            }
            SystemSpec::Benchmark { a, input_map } => {
                if input_map.is_some() && kind != SpectralRadiusMisspec {
                    return Err(RunError::config(format!("input_map is not used by `{kind}`")));
                }
                match kind {
                    WellspecConvergence | LqrWellspec => systems::wellspec(*a),
                    MisspecConvergence | BiasVsHorizon => systems::misspec(*a),
                    SpectralRadiusMisspec => systems::misspec_control(
                        *a,
                        input_map.unwrap_or(systems::MISSPEC_CONTROL_INPUT),
                    ),
                    Nonlinear => unreachable!("handled above"),
                }
                .map_err(invalid)?
            }
            SystemSpec::Jordan => systems::jordan_example().map_err(invalid)?,
            SystemSpec::Matrices { a, b, b_w, c, d_v } => {
                let a = matrix("a", a, None)?;
                let dx = a.nrows();
                let b = matrix("b", b.as_deref().unwrap_or(&[]), Some(dx))?;
                let c = matrix("c", c, None)?;
                let d_v = matrix("d_v", d_v.as_deref().unwrap_or(&[]), Some(c.nrows()))?;
                LtiSystem::new(a, b, matrix("b_w", b_w, None)?, c, d_v).map_err(invalid)?
            }
        };
        match kind {
            WellspecConvergence | LqrWellspec if !linear.is_fully_observed() => Err(
                RunError::config(format!("`{kind}` needs a fully observed system (C = I, no sensor noise)")),
            ),
            WellspecConvergence | LqrWellspec if kind == LqrWellspec && linear.du() == 0 => {
                Err(RunError::config("`lqr_wellspec` needs an input channel"))
            }
            MisspecConvergence | BiasVsHorizon if linear.is_fully_observed() || linear.du() > 0 => {
                Err(RunError::config(format!(
                    "`{kind}` needs a partially observed system without inputs"
                )))
            }
            SpectralRadiusMisspec if linear.du() == 0 => {
                Err(RunError::config("`spectral_radius_misspec` needs an input channel"))
            }
            _ => Ok(BuiltSystem::Linear(linear)),
        }
    }
}
