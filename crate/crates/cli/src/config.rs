//! Experiment configuration: JSON, one file per run.

use qvflab_core::hydro::{ProfileSpec, TestFunction};
use qvflab_core::models::ModelSpec;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Classify,
    Verify,
    Simulate,
    Hydro,
    Correlations,
    Walk,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Classify => "classify",
            Command::Verify => "verify",
            Command::Simulate => "simulate",
            Command::Hydro => "hydro",
            Command::Correlations => "correlations",
            Command::Walk => "walk",
        }
    }
}

/// One conserved fiber `(N, M)` for the exact generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fiber {
    pub n: usize,
    pub total: u32,
}

/// Walk parameters given directly instead of through a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkParams {
    #[serde(rename = "D")]
    pub d: f64,
    pub a: f64,
    pub v2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must match the subcommand when present.
    #[serde(default)]
    pub command: Option<Command>,
    /// Mandatory; there is no entropy fallback.
    pub seed: u64,
    #[serde(default)]
    pub models: Vec<ModelSpec>,
    /// Initial mean profile for Monte Carlo starts.
    #[serde(default)]
    pub profile: Option<ProfileSpec>,
    /// Deterministic initial configuration; excludes `profile`.
    #[serde(default)]
    pub state: Option<Vec<f64>>,
    /// Lattice sizes.
    #[serde(default)]
    pub ns: Vec<usize>,
    /// Observation times (macroscopic); defaults to `[t_end]`.
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default)]
    pub t_end: Option<f64>,
    #[serde(default)]
    pub replicas: Option<usize>,
    /// Test functions for martingale and pairing output.
    #[serde(default)]
    pub observables: Option<Vec<TestFunction>>,
    #[serde(default)]
    pub fibers: Vec<Fiber>,
    #[serde(default)]
    pub walks: Vec<WalkParams>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Observation schedule, sorted and ending at the horizon.
    pub fn schedule(&self) -> Result<Vec<f64>, String> {
        let mut times = self.times.clone();
        if let Some(t) = self.t_end {
            if times.last().is_none_or(|&last| last < t) {
                times.push(t);
            }
        }
        if times.is_empty() {
            return Err("need `times` or `t_end`".into());
        }
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) || times.windows(2).any(|w| w[0] > w[1]) {
            return Err(format!("times must be finite, nonnegative and sorted, got {times:?}"));
        }
        if let Some(t) = self.t_end {
            if *times.last().unwrap() > t {
                return Err(format!("times extend past t_end = {t}"));
            }
        }
        Ok(times)
    }

    pub fn replicas(&self, default: usize) -> Result<usize, String> {
        match self.replicas {
            Some(0) => Err("replicas must be positive".into()),
            Some(r) => Ok(r),
            None => Ok(default),
        }
    }

    pub fn observables(&self) -> Vec<TestFunction> {
        self.observables.clone().unwrap_or_else(TestFunction::standard_set)
    }
}
