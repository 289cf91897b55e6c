use std::fmt;
use std::path::{Path, PathBuf};

use balance_core::fuzz::FuzzConfig;
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Couple,
    OracleCompare,
    Diffusion,
    ScalingStudy,
    Prop1Fuzz,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = self.to_possible_value().expect("no skipped variants");
        f.write_str(name.get_name())
    }
}

/// Everything that determines a run. Serialized back into the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Informational; the command given on the command line wins.
    #[serde(default)]
    pub command: Option<Command>,
    pub n: Option<usize>,
    pub n_grid: Option<Vec<usize>>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub policies: Vec<String>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub out: Option<PathBuf>,
    /// Initial state `(γ₁, γ₂)`: `⌊γ₁√N⌋` idle and `⌊γ₂√N⌋` doubly loaded
    /// servers. Empty system when absent.
    pub gamma: Option<[f64; 2]>,
    /// Diffusion start `(x₁, x₂)`.
    #[serde(default)]
    pub x0: [f64; 2],
    /// Event script for `simulate`, relative to the config file.
    pub events: Option<PathBuf>,
    #[serde(default = "yes")]
    pub write_paths: bool,
    #[serde(default = "yes")]
    pub parallel: bool,
    #[serde(default)]
    pub antithetic: bool,
    /// Policy compared against the diffusion by the `diffusion` command.
    pub ctmc_policy: Option<String>,
    /// Pair whose coupled sup-distance of `X₂` the scaling study reports.
    pub universality: Option<Vec<String>>,
    #[serde(default)]
    pub fuzz: FuzzSection,
    #[serde(default)]
    pub tolerances: Tolerances,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FuzzSection {
    pub trials: u64,
    pub n: usize,
    pub max_cap: usize,
    pub search_n: usize,
    pub search_trials: u64,
}

impl Default for FuzzSection {
    fn default() -> Self {
        let d = FuzzConfig::default();
        Self { trials: d.trials, n: d.n, max_cap: d.max_cap, search_n: d.search_n, search_trials: d.search_trials }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Largest total-variation gap between engine and exact chain.
    pub tv: f64,
    /// Largest gap between engine and diffusion means.
    pub moment_gap: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { tv: 0.03, moment_gap: 0.15 }
    }
}

fn default_beta() -> f64 {
    1.0
}

fn default_horizon() -> f64 {
    10.0
}

fn default_reps() -> usize {
    1
}

fn default_dt() -> f64 {
    balance_core::diffusion::DEFAULT_DT
}

fn yes() -> bool {
    true
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config: Self =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
        if let Some(events) = &config.events {
            if events.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                config.events = Some(base.join(events));
            }
        }
        Ok(config)
    }

    pub fn require_n(&self) -> Result<usize, CliError> {
        self.n.ok_or_else(|| CliError::Config("this command needs `n`".into()))
    }

    pub fn fuzz_config(&self) -> FuzzConfig {
        let f = &self.fuzz;
        FuzzConfig {
            trials: f.trials,
            n: f.n,
            max_cap: f.max_cap,
            search_n: f.search_n,
            search_trials: f.search_trials,
            seed: self.seed,
        }
    }
}
