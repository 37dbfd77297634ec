//! Flat `[section]` / `key = value` experiment configuration with
//! environment-variable overrides.
//!
//! Grammar: lines are either blank, a `# comment`, a `[section]` header or
//! `key = value`. Values are plain strings; lists are comma-separated.
//! Every key can be overridden by an environment variable named
//! `PMCMC_<SECTION>_<KEY>` in upper case, e.g. `PMCMC_RUN_ITERS=500`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use particle_mcmc::adapt::{AdaptConfig, AdaptMode};
use particle_mcmc::csmc::{Backward, Resampling};
use particle_mcmc::strategies::PcnlPrecond;

pub const ENV_PREFIX: &str = "PMCMC";

#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    values: BTreeMap<(String, String), String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut section = String::new();
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| anyhow!("line {}: unterminated section header", lineno + 1))?;
                section = name.trim().to_lowercase();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", lineno + 1))?;
            values.insert(
                (section.clone(), key.trim().to_lowercase()),
                value.trim().to_string(),
            );
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::parse(&text)?;
        cfg.apply_env_overrides();
        Ok(cfg)
    }

    /// `PMCMC_<SECTION>_<KEY>` environment variables win over file values.
    fn apply_env_overrides(&mut self) {
        for (key, value) in std::env::vars() {
            let Some(rest) = key.strip_prefix(&format!("{ENV_PREFIX}_")) else {
                continue;
            };
            let Some((section, name)) = rest.split_once('_') else {
                continue;
            };
            self.values
                .insert((section.to_lowercase(), name.to_lowercase()), value);
        }
    }

    fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.values.get(&(section.to_string(), key.to_string())).map(|s| s.as_str())
    }

    fn require(&self, section: &str, key: &str) -> Result<&str> {
        self.get(section, key)
            .ok_or_else(|| anyhow!("missing config key [{section}] {key}"))
    }

    fn parse_as<T: std::str::FromStr>(&self, section: &str, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(section, key) {
            None => Ok(default),
            Some(s) => s
                .parse::<T>()
                .map_err(|e| anyhow!("config key [{section}] {key} = {s:?}: {e}")),
        }
    }
}

#[derive(Debug, Clone)]
pub enum ModelSpec {
    Lgssm { dim: usize, horizon: usize, lambda: f64 },
    StochVol { dim: usize, horizon: usize, phi: f64, rho: f64, tau: f64 },
}

impl ModelSpec {
    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::Lgssm { dim, .. } | ModelSpec::StochVol { dim, .. } => *dim,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            ModelSpec::Lgssm { horizon, .. } | ModelSpec::StochVol { horizon, .. } => *horizon,
        }
    }

    /// The prior dispersion parameter reported in the `tau` column.
    pub fn dispersion(&self) -> f64 {
        match self {
            ModelSpec::Lgssm { lambda, .. } => *lambda,
            ModelSpec::StochVol { tau, .. } => *tau,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    /// Observations file; when absent the data are simulated from the model.
    pub data_path: Option<PathBuf>,
    pub data_seed: Option<u64>,
    pub strategies: Vec<String>,
    /// Total particle count N+1 (reference included).
    pub particles: usize,
    pub kappa: f64,
    pub iters: usize,
    pub burn_in: usize,
    pub chains: usize,
    pub calibration_iters: usize,
    pub delta0: f64,
    pub resampling: Resampling,
    pub backward: Backward,
    pub forced_move: bool,
    pub pcnl_precond: PcnlPrecond,
    pub adapt: AdaptConfig,
}

pub fn experiment_config(raw: &RawConfig) -> Result<ExperimentConfig> {
    let kind = raw.require("model", "kind")?.to_lowercase();
    let dim: usize = raw.parse_as("model", "dim", 1)?;
    let horizon: usize = raw.parse_as("model", "horizon", 1)?;
    let model = match kind.as_str() {
        "lgssm" => ModelSpec::Lgssm { dim, horizon, lambda: raw.parse_as("model", "lambda", 1.0)? },
        "stochvol" => ModelSpec::StochVol {
            dim,
            horizon,
            phi: raw.parse_as("model", "phi", 0.9)?,
            rho: raw.parse_as("model", "rho", 0.25)?,
            tau: raw.parse_as("model", "tau", 1.0)?,
        },
        other => bail!("unknown model kind {other:?} (expected lgssm or stochvol)"),
    };

    let strategies: Vec<String> = raw
        .require("run", "strategies")?
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if strategies.is_empty() {
        bail!("[run] strategies must name at least one strategy");
    }
    let particles: usize = raw.parse_as("run", "particles", 16)?;
    if particles < 2 {
        bail!("[run] particles is the total N+1 and must be at least 2");
    }

    let resampling = match raw.get("run", "resampling").unwrap_or("killing") {
        "killing" => Resampling::Killing,
        "multinomial" => Resampling::Multinomial,
        other => bail!("unknown resampling scheme {other:?}"),
    };
    let backward = match raw.get("run", "backward").unwrap_or("backward_sampling") {
        "backward_sampling" => Backward::BackwardSampling,
        "ancestor_tracing" => Backward::AncestorTracing,
        other => bail!("unknown backward mode {other:?}"),
    };
    let forced_move = match raw.get("run", "forced_move").unwrap_or("on") {
        "on" | "true" => true,
        "off" | "false" => false,
        other => bail!("forced_move must be on or off, got {other:?}"),
    };
    let pcnl_precond = match raw.get("run", "pcnl_precond").unwrap_or("cov") {
        "cov" => PcnlPrecond::PriorStep,
        "truncated" => PcnlPrecond::Truncated(raw.parse_as("run", "pcnl_window", 1)?),
        other => bail!("pcnl_precond must be cov or truncated, got {other:?}"),
    };

    let defaults = AdaptConfig::default();
    let adapt = AdaptConfig {
        target: raw.parse_as("adapt", "target", defaults.target)?,
        dead_zone: raw.parse_as("adapt", "sigma", defaults.dead_zone)?,
        window: raw.parse_as("adapt", "window", defaults.window)?,
        base_rate: raw.parse_as("adapt", "rho", defaults.base_rate)?,
        min_rate: raw.parse_as("adapt", "rho_min", defaults.min_rate)?,
        exponent: raw.parse_as("adapt", "gamma", defaults.exponent)?,
        mode: AdaptMode::PerTimeStep, // switched per strategy by the runner
    };

    Ok(ExperimentConfig {
        model,
        data_path: raw.get("model", "data").map(PathBuf::from),
        data_seed: raw.get("model", "data_seed").map(|s| s.parse()).transpose()?,
        strategies,
        particles,
        kappa: raw.parse_as("run", "kappa", 1.0)?,
        iters: raw.parse_as("run", "iters", 10_000)?,
        burn_in: raw.parse_as("run", "burn_in", 0)?,
        chains: raw.parse_as("run", "chains", 4)?,
        calibration_iters: raw.parse_as("run", "calibration_iters", 10_000)?,
        delta0: raw.parse_as("run", "delta0", 0.01)?,
        resampling,
        backward,
        forced_move,
        pcnl_precond,
        adapt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_defaults() {
        let raw = RawConfig::parse(
            "# comment\n[model]\nkind = lgssm\ndim = 3\nhorizon = 5\nlambda = 0.7\n\n\
             [run]\nstrategies = p-mala, csmc\nparticles = 8\n",
        )
        .unwrap();
        let cfg = experiment_config(&raw).unwrap();
        assert_eq!(cfg.model.dim(), 3);
        assert_eq!(cfg.model.horizon(), 5);
        assert_eq!(cfg.strategies, vec!["p-mala", "csmc"]);
        assert_eq!(cfg.particles, 8);
        assert_eq!(cfg.adapt.target, 0.75);
        assert!(cfg.forced_move);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(RawConfig::parse("[model\nkind=lgssm").is_err());
        assert!(RawConfig::parse("[model]\nnot a pair").is_err());
    }

    #[test]
    fn unknown_enums_are_reported() {
        let raw = RawConfig::parse(
            "[model]\nkind = lgssm\n[run]\nstrategies = csmc\nresampling = systematic\n",
        )
        .unwrap();
        let err = experiment_config(&raw).unwrap_err().to_string();
        assert!(err.contains("systematic"));
    }
}
