//! Experiment orchestration: data, calibration, multi-chain sampling and
//! CSV outputs.
//!
//! Per strategy: one calibration run tunes the step sizes (skipped for the
//! bootstrap kernels, which have none), then the configured number of
//! independent chains start from the final calibration sample with frozen
//! step sizes, each on its own RNG stream. Chains run in parallel; all
//! statistical outputs depend only on (config, seed), never on the thread
//! count. Timing columns are measured and therefore exempt from the
//! byte-identity guarantee.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::DVector;
use rayon::prelude::*;

use particle_mcmc::adapt::{run_calibrated_chain, AdaptMode, ChainOptions};
use particle_mcmc::csmc::SweepConfig;
use particle_mcmc::diag::{acceptance_by_time, ess_rank_normalized};
use particle_mcmc::model::{
    make_lgssm, make_stochvol, FeynmanKac, GaussianDynamics, Lgssm, StochVol, Trajectory,
};
use particle_mcmc::strategies::{build_strategy, registry, BuildOptions};
use particle_mcmc::Prng;
use rand::SeedableRng;

use crate::config::{ExperimentConfig, ModelSpec};

/// Deterministic stream derivation: one master seed, one stream per
/// (purpose, strategy, chain) triple.
fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    let mut x = master
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(a.wrapping_mul(0xbf58476d1ce4e5b9))
        .wrapping_add(b.wrapping_mul(0x94d049bb133111eb));
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58476d1ce4e5b9);
    x ^= x >> 27;
    x
}

pub struct BuiltModel {
    pub model: Arc<dyn FeynmanKac>,
    pub dynamics: Arc<dyn GaussianDynamics>,
    pub observations: Vec<DVector<f64>>,
}

/// Simulates observations from the configured generative model.
pub fn simulate_observations(spec: &ModelSpec, seed: u64) -> Result<Vec<DVector<f64>>> {
    let mut rng = Prng::seed_from_u64(seed);
    let obs = match spec {
        ModelSpec::Lgssm { dim, horizon, lambda } => {
            Lgssm::simulate(*dim, *horizon, *lambda, &mut rng).1
        }
        ModelSpec::StochVol { dim, horizon, phi, rho, tau } => {
            StochVol::simulate(*dim, *horizon, *phi, *rho, *tau, &mut rng)?.1
        }
    };
    Ok(obs)
}

pub fn build_model(spec: &ModelSpec, observations: Vec<DVector<f64>>) -> Result<BuiltModel> {
    match spec {
        ModelSpec::Lgssm { dim, horizon, lambda } => {
            let m = Arc::new(make_lgssm(*dim, *horizon, *lambda, observations.clone())?);
            Ok(BuiltModel { model: m.clone(), dynamics: m, observations })
        }
        ModelSpec::StochVol { dim, horizon, phi, rho, tau } => {
            let m =
                Arc::new(make_stochvol(*dim, *horizon, *phi, *rho, *tau, observations.clone())?);
            Ok(BuiltModel { model: m.clone(), dynamics: m, observations })
        }
    }
}

/// Header-free CSV: one row per time step, D comma-separated columns.
pub fn write_observations_csv(path: &Path, obs: &[DVector<f64>]) -> Result<()> {
    let mut out = String::new();
    for row in obs {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn read_observations_csv(path: &Path, horizon: usize, dim: usize) -> Result<Vec<DVector<f64>>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| anyhow!("{}:{}: {e}", path.display(), lineno + 1))?;
        if vals.len() != dim {
            bail!("{}:{}: expected {dim} columns, got {}", path.display(), lineno + 1, vals.len());
        }
        rows.push(DVector::from_vec(vals));
    }
    if rows.len() != horizon {
        bail!("{}: expected {horizon} rows, got {}", path.display(), rows.len());
    }
    Ok(rows)
}

struct StrategyReport {
    name: String,
    ess_min: f64,
    ess_med: f64,
    ess_max: f64,
    ess_energy: f64,
    sampling_seconds: f64,
    acceptance: Vec<f64>,
    energies: Vec<Vec<f64>>,
    delta_trace: Vec<(usize, Vec<f64>)>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn run_strategy(
    cfg: &ExperimentConfig,
    built: &BuiltModel,
    name: &str,
    strategy_index: u64,
    seed: u64,
    init: &Trajectory,
) -> Result<StrategyReport> {
    let info = registry()
        .into_iter()
        .find(|i| i.name == name)
        .ok_or_else(|| anyhow!("unknown strategy '{name}'"))?;
    let opts = BuildOptions { pcnl_precond: cfg.pcnl_precond.clone() };
    let strategy =
        build_strategy(name, built.model.clone(), Some(built.dynamics.clone()), &opts)
            .map_err(|e| anyhow!("strategy '{name}': {e}"))?;
    let path_space = info.path_space;
    let horizon = built.model.horizon();
    let sweep_horizon = if path_space { 1 } else { horizon };

    let init = if path_space {
        Trajectory::new(vec![init.stack()]).expect("stacked initial path is finite")
    } else {
        init.clone()
    };

    let twisted = name.starts_with("tp-");
    let calibrate = !matches!(name, "csmc" | "imh1");
    let mut adapt = cfg.adapt.clone();
    adapt.mode = if twisted || path_space { AdaptMode::Global } else { AdaptMode::PerTimeStep };

    let sweep = SweepConfig {
        n_extra: cfg.particles - 1,
        deltas: vec![cfg.delta0; sweep_horizon],
        kappa: cfg.kappa,
        resampling: cfg.resampling,
        backward: cfg.backward,
        forced_move: cfg.forced_move,
    };

    // Calibration phase (also plain warm-up for the bootstrap kernels).
    let calib_options = ChainOptions {
        sweep: sweep.clone(),
        adapt: adapt.clone(),
        calibration_iters: cfg.calibration_iters,
        calibrate,
        iters: 0,
        delta_trace_every: (cfg.calibration_iters / 200).max(1),
    };
    let mut calib_rng = Prng::seed_from_u64(derive_seed(seed, strategy_index, u64::MAX));
    let calib = run_calibrated_chain(strategy.as_ref(), &calib_options, &init, &mut calib_rng)
        .map_err(|e| anyhow!("strategy '{name}': calibration failed: {e}"))?;

    // Independent chains with frozen step sizes.
    let chain_options = ChainOptions {
        sweep: SweepConfig { deltas: calib.final_deltas.clone(), ..sweep },
        adapt,
        calibration_iters: 0,
        calibrate: false,
        iters: cfg.iters,
        delta_trace_every: 0,
    };
    let chain_results: Vec<particle_mcmc::adapt::ChainOutput> = (0..cfg.chains)
        .into_par_iter()
        .map(|chain| {
            let mut rng =
                Prng::seed_from_u64(derive_seed(seed, strategy_index, chain as u64));
            run_calibrated_chain(strategy.as_ref(), &chain_options, &calib.final_trajectory, &mut rng)
        })
        .collect::<particle_mcmc::Result<_>>()
        .map_err(|e| anyhow!("strategy '{name}': chain failed: {e}"))?;

    // Per-time-step ESS of the first state coordinate across chains.
    let burn = cfg.burn_in.min(cfg.iters.saturating_sub(1));
    let mut per_t_ess = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let chains: Vec<Vec<f64>> = chain_results
            .iter()
            .map(|c| {
                c.samples[burn..]
                    .iter()
                    .map(|s| {
                        if path_space {
                            s.state(0)[t * built.model.dim()]
                        } else {
                            s.state(t)[0]
                        }
                    })
                    .collect()
            })
            .collect();
        per_t_ess.push(ess_rank_normalized(&chains).ess);
    }
    let ess_min = per_t_ess.iter().copied().fold(f64::INFINITY, f64::min);
    let ess_max = per_t_ess.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ess_med = median(&mut per_t_ess.clone());
    let energy_chains: Vec<Vec<f64>> =
        chain_results.iter().map(|c| c.energies[burn..].to_vec()).collect();
    let ess_energy = ess_rank_normalized(&energy_chains).ess;

    // Acceptance per time step (whole-path rate for path-space kernels).
    let mut acceptance = vec![0.0; horizon];
    for c in &chain_results {
        let rates = acceptance_by_time(&c.accept_history);
        for t in 0..horizon {
            acceptance[t] += if path_space { rates[0] } else { rates[t] };
        }
    }
    for a in acceptance.iter_mut() {
        *a /= cfg.chains as f64;
    }

    let sampling_seconds: f64 =
        chain_results.iter().map(|c| c.seconds_per_iter * cfg.iters as f64).sum();
    let energies = chain_results.iter().map(|c| c.energies.clone()).collect();

    Ok(StrategyReport {
        name: name.to_string(),
        ess_min,
        ess_med,
        ess_max,
        ess_energy,
        sampling_seconds,
        acceptance,
        energies,
        delta_trace: calib.delta_trace,
    })
}

/// Runs the configured experiment and writes all outputs under `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64, out_dir: &Path) -> Result<()> {
    if cfg.chains < 2 {
        bail!("[run] chains must be at least 2 for the multi-chain diagnostics");
    }
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;

    let observations = match &cfg.data_path {
        Some(path) => read_observations_csv(path, cfg.model.horizon(), cfg.model.dim())?,
        None => simulate_observations(&cfg.model, cfg.data_seed.unwrap_or(derive_seed(seed, 0xda7a, 0)))?,
    };
    let built = build_model(&cfg.model, observations)?;
    write_observations_csv(&out_dir.join("data.csv"), &built.observations)?;

    // A shared starting path: one draw from the prior dynamics.
    let mut init_rng = Prng::seed_from_u64(derive_seed(seed, 0x1217, 0));
    let decomp = built
        .model
        .decomposition()
        .ok_or_else(|| anyhow!("built-in models always decompose"))?;
    let init = {
        let mut states: Vec<DVector<f64>> = Vec::with_capacity(built.model.horizon());
        for t in 0..built.model.horizon() {
            let prev = (t > 0).then(|| &states[t - 1]);
            states.push(decomp.sample_m(t, prev, &mut init_rng));
        }
        Trajectory::new(states)?
    };

    let mut reports = Vec::new();
    for (idx, name) in cfg.strategies.iter().enumerate() {
        eprintln!("running strategy {name} ({}/{})", idx + 1, cfg.strategies.len());
        reports.push(run_strategy(cfg, &built, name, idx as u64, seed, &init)?);
    }

    write_ess_csv(&out_dir.join("ess.csv"), cfg, &reports)?;
    write_acceptance_csv(&out_dir.join("acceptance.csv"), &reports)?;
    for report in &reports {
        let dir = out_dir.join(&report.name);
        fs::create_dir_all(&dir)?;
        write_energy_csv(&dir.join("energy.csv"), report)?;
        write_delta_csv(&dir.join("delta.csv"), report)?;
    }
    write_run_json(&out_dir.join("run.json"), cfg, seed, &reports)?;
    Ok(())
}

fn write_ess_csv(path: &Path, cfg: &ExperimentConfig, reports: &[StrategyReport]) -> Result<()> {
    let mut out = String::from("strategy,tau,stat,ess,ess_per_sec\n");
    let tau = cfg.model.dispersion();
    for r in reports {
        for (stat, value) in [
            ("min", r.ess_min),
            ("med", r.ess_med),
            ("max", r.ess_max),
            ("energy", r.ess_energy),
        ] {
            let per_sec = value / r.sampling_seconds.max(1e-12);
            out.push_str(&format!("{},{tau},{stat},{value},{per_sec}\n", r.name));
        }
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn write_acceptance_csv(path: &Path, reports: &[StrategyReport]) -> Result<()> {
    let mut out = String::from("strategy,t,rate\n");
    for r in reports {
        for (t, rate) in r.acceptance.iter().enumerate() {
            out.push_str(&format!("{},{t},{rate}\n", r.name));
        }
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn write_energy_csv(path: &Path, report: &StrategyReport) -> Result<()> {
    let mut out = String::from("chain,iter,energy\n");
    for (chain, series) in report.energies.iter().enumerate() {
        for (iter, e) in series.iter().enumerate() {
            out.push_str(&format!("{chain},{iter},{e}\n"));
        }
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn write_delta_csv(path: &Path, report: &StrategyReport) -> Result<()> {
    let mut out = String::from("iter,t,delta\n");
    for (iter, deltas) in &report.delta_trace {
        for (t, d) in deltas.iter().enumerate() {
            out.push_str(&format!("{iter},{t},{d}\n"));
        }
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn write_run_json(
    path: &Path,
    cfg: &ExperimentConfig,
    seed: u64,
    reports: &[StrategyReport],
) -> Result<()> {
    // Timing entries are wall-clock measurements and are excluded from the
    // determinism guarantee.
    let strategies: Vec<String> = reports
        .iter()
        .map(|r| {
            format!(
                "    {{\"name\": \"{}\", \"ess_med\": {}, \"sampling_seconds\": {:.3}}}",
                r.name, r.ess_med, r.sampling_seconds
            )
        })
        .collect();
    let model = match &cfg.model {
        ModelSpec::Lgssm { dim, horizon, lambda } => format!(
            "{{\"kind\": \"lgssm\", \"dim\": {dim}, \"horizon\": {horizon}, \"lambda\": {lambda}}}"
        ),
        ModelSpec::StochVol { dim, horizon, phi, rho, tau } => format!(
            "{{\"kind\": \"stochvol\", \"dim\": {dim}, \"horizon\": {horizon}, \
             \"phi\": {phi}, \"rho\": {rho}, \"tau\": {tau}}}"
        ),
    };
    let body = format!(
        "{{\n  \"seed\": {seed},\n  \"model\": {model},\n  \"particles\": {},\n  \
         \"iters\": {},\n  \"chains\": {},\n  \"strategies\": [\n{}\n  ]\n}}\n",
        cfg.particles,
        cfg.iters,
        cfg.chains,
        strategies.join(",\n")
    );
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}
