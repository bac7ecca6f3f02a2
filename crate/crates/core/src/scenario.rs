//! Scenario configuration (TOML).
//!
//! ```toml
//! seed = 7
//! variant = "both"          # spme | apme | both
//! output_dir = "out"
//!
//! [system]
//! random = { n = 3, symmetry = "cpt", lambda = 0.01, shells = 1 }
//! # or: file = "system.json"
//!
//! [rates]
//! mode = "on_shell"         # or "finite_window" with dt = 0.5
//!
//! [evolve]
//! p0 = "random"             # "uniform", "random" or an explicit list
//! t1 = 50.0
//! step = 1e-3
//! record_every = 100
//!
//! [microsim]
//! enabled = true
//! tau_d = 0.5
//! cycles = 200
//! ```
//!
//! Unknown keys are rejected. Everything is resolved and validated by
//! [`ScenarioConfig::resolve`] before any computation starts.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::io::{read_system, IoError};
use crate::kinetics::{RateMode, Variant, DEFAULT_ETA};
use crate::microsim::CycleConfig;
use crate::solver::ProbabilityState;
use crate::system::{random_system, SymmetryClass, SystemError, SystemSpec};
use crate::unitary::PropagatorMode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {msg}")]
    Read { path: PathBuf, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    System(#[from] SystemError),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VariantSelection {
    Spme,
    Apme,
    #[default]
    Both,
}

impl VariantSelection {
    pub fn variants(self) -> Vec<Variant> {
        match self {
            VariantSelection::Spme => vec![Variant::Spme],
            VariantSelection::Apme => vec![Variant::Apme],
            VariantSelection::Both => vec![Variant::Spme, Variant::Apme],
        }
    }
}

impl std::str::FromStr for VariantSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "spme" => Ok(VariantSelection::Spme),
            "apme" => Ok(VariantSelection::Apme),
            "both" => Ok(VariantSelection::Both),
            other => Err(format!("unknown variant `{other}` (expected spme|apme|both)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSystemConfig {
    pub n: usize,
    #[serde(default)]
    pub symmetry: SymmetryClass,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "one")]
    pub shells: usize,
}

fn default_lambda() -> f64 {
    0.01
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub file: Option<PathBuf>,
    pub random: Option<RandomSystemConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RateModeKind {
    FiniteWindow,
    #[default]
    OnShell,
}

impl std::str::FromStr for RateModeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "finite_window" | "finite" => Ok(RateModeKind::FiniteWindow),
            "on_shell" | "onshell" => Ok(RateModeKind::OnShell),
            other => Err(format!("unknown rate mode `{other}` (expected finite_window|on_shell)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RatesConfig {
    #[serde(default)]
    pub mode: RateModeKind,
    pub dt: Option<f64>,
    pub eta: Option<f64>,
    pub eta_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum InitialState {
    Named(String),
    Explicit(Vec<f64>),
}

impl Default for InitialState {
    fn default() -> Self {
        InitialState::Named("uniform".into())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EvolveConfig {
    #[serde(default)]
    pub p0: InitialState,
    pub t0: Option<f64>,
    pub t1: Option<f64>,
    pub step: Option<f64>,
    pub record_every: Option<usize>,
    #[serde(default)]
    pub backward: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PropagatorKind {
    #[default]
    Exact,
    Perturbative,
}

impl std::str::FromStr for PropagatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "exact" => Ok(PropagatorKind::Exact),
            "perturbative" => Ok(PropagatorKind::Perturbative),
            other => Err(format!("unknown propagator `{other}` (expected exact|perturbative)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MicrosimConfig {
    #[serde(default)]
    pub enabled: bool,
    pub tau_d: Option<f64>,
    pub cycles: Option<usize>,
    #[serde(default)]
    pub propagator: PropagatorKind,
    pub steps_per_cycle: Option<usize>,
    pub lambda_sweep: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub variant: VariantSelection,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default)]
    pub rates: RatesConfig,
    #[serde(default)]
    pub evolve: EvolveConfig,
    #[serde(default)]
    pub microsim: MicrosimConfig,
}

/// Fully validated scenario, ready to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub system: SystemSpec,
    pub rate_mode: RateMode,
    pub variants: Vec<Variant>,
    pub p0: Vec<f64>,
    pub t0: f64,
    pub t1: f64,
    pub step: Option<f64>,
    pub record_every: usize,
    pub microsim: Option<MicrosimPlan>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct MicrosimPlan {
    pub cycle: CycleConfig,
    pub steps_per_cycle: usize,
    pub lambda_sweep: Option<Vec<f64>>,
}

pub const DEFAULT_TAU_D: f64 = 0.5;
pub const DEFAULT_STEPS_PER_CYCLE: usize = 50;

/// Point drawn uniformly from the probability simplex.
pub fn random_simplex_point(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..dim).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.to_path_buf(), msg: e.to_string() })?;
        toml::from_str(&text).map_err(|e| ConfigError::Read { path: path.to_path_buf(), msg: e.to_string() })
    }

    /// Relative system-file paths are taken relative to `base`.
    pub fn resolve(&self, base: Option<&Path>) -> Result<Scenario, ConfigError> {
        let system = match (&self.system.file, &self.system.random) {
            (Some(_), Some(_)) => return Err(invalid("system: give either `file` or `random`, not both")),
            (None, None) => return Err(invalid("system: no system given (set `file` or `random`)")),
            (Some(f), None) => {
                let path = match base {
                    Some(b) if f.is_relative() => b.join(f),
                    _ => f.clone(),
                };
                read_system(&path)?
            }
            (None, Some(r)) => {
                if r.n == 0 {
                    return Err(invalid("system.random.n must be at least 1"));
                }
                random_system(r.n, r.symmetry, r.lambda, r.shells, self.seed)?
            }
        };

        let rate_mode = match self.rates.mode {
            RateModeKind::FiniteWindow => {
                let dt = self.rates.dt.ok_or_else(|| invalid("rates.dt is required for finite_window"))?;
                if !(dt > 0.0 && dt.is_finite()) {
                    return Err(invalid(format!("rates.dt must be positive, got {dt}")));
                }
                RateMode::FiniteWindow { dt }
            }
            RateModeKind::OnShell => {
                let eta = self.rates.eta.unwrap_or(DEFAULT_ETA);
                let eta_norm = self.rates.eta_norm.unwrap_or(1.0);
                if !(eta >= 0.0 && eta.is_finite() && eta_norm > 0.0 && eta_norm.is_finite()) {
                    return Err(invalid(format!("rates: need eta >= 0 and eta_norm > 0, got {eta}, {eta_norm}")));
                }
                RateMode::OnShell { eta, eta_norm }
            }
        };

        let dim = system.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_0f_9e0);
        let p0 = match &self.evolve.p0 {
            InitialState::Named(s) if s == "uniform" => vec![1.0 / dim as f64; dim],
            InitialState::Named(s) if s == "random" => random_simplex_point(&mut rng, dim),
            InitialState::Named(s) => return Err(invalid(format!("evolve.p0: unknown initial state `{s}`"))),
            InitialState::Explicit(p) => {
                if p.len() != dim {
                    return Err(invalid(format!("evolve.p0 has {} entries, system has {dim} states", p.len())));
                }
                p.clone()
            }
        };
        ProbabilityState::new(p0.clone(), 0.0).map_err(|e| invalid(format!("evolve.p0: {e}")))?;

        let t0 = self.evolve.t0.unwrap_or(0.0);
        let default_span = if self.evolve.backward { -10.0 } else { 10.0 };
        let t1 = self.evolve.t1.unwrap_or(t0 + default_span);
        if !(t0.is_finite() && t1.is_finite()) || t0 == t1 {
            return Err(invalid(format!("evolve: empty or non-finite span [{t0}, {t1}]")));
        }
        if self.evolve.backward != (t1 < t0) {
            return Err(invalid(format!(
                "evolve: span [{t0}, {t1}] disagrees with backward = {}",
                self.evolve.backward
            )));
        }
        if let Some(h) = self.evolve.step {
            if !(h > 0.0 && h.is_finite()) {
                return Err(invalid(format!("evolve.step must be positive, got {h}")));
            }
        }
        let record_every = self.evolve.record_every.unwrap_or(1);
        if record_every == 0 {
            return Err(invalid("evolve.record_every must be at least 1"));
        }

        let microsim = if self.microsim.enabled {
            let propagator = match self.microsim.propagator {
                PropagatorKind::Exact => PropagatorMode::Exact,
                PropagatorKind::Perturbative => PropagatorMode::Perturbative(2),
            };
            let cycle = CycleConfig {
                tau_d: self.microsim.tau_d.unwrap_or(DEFAULT_TAU_D),
                n_cycles: self.microsim.cycles.unwrap_or(100),
                propagator,
            };
            cycle.validate(&system).map_err(|e| invalid(format!("microsim: {e}")))?;
            if let Some(ls) = &self.microsim.lambda_sweep {
                if ls.len() < 2 || ls.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
                    return Err(invalid("microsim.lambda_sweep needs at least two positive values"));
                }
            }
            let steps_per_cycle = self.microsim.steps_per_cycle.unwrap_or(DEFAULT_STEPS_PER_CYCLE);
            if steps_per_cycle == 0 {
                return Err(invalid("microsim.steps_per_cycle must be at least 1"));
            }
            Some(MicrosimPlan { cycle, steps_per_cycle, lambda_sweep: self.microsim.lambda_sweep.clone() })
        } else {
            None
        };

        Ok(Scenario {
            seed: self.seed,
            system,
            rate_mode,
            variants: self.variant.variants(),
            p0,
            t0,
            t1,
            step: self.evolve.step,
            record_every,
            microsim,
            output_dir: self.output_dir.clone().unwrap_or_else(|| PathBuf::from(".")),
        })
    }
}
