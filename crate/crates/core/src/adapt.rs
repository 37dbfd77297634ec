//! Step-size calibration targeting a per-time-step acceptance rate.
//!
//! A ring buffer holds the last `W` sweeps' acceptance indicators per time
//! step. After each sweep the windowed acceptance rate `α_t` is compared
//! with the target `α*`; outside the dead zone `|α_t - α*| < σ` the step
//! size moves by `max(k^γ ρ, ρ_min)(α_t - α*)/α*` (an additive update, kept
//! verbatim from its source despite its scale sensitivity) and is floored at
//! `1e-12` so sustained rejection cannot drive it nonpositive.
//!
//! Twisted kernels calibrate a single global step size from the
//! time-averaged acceptance rate, because twisting couples the acceptance
//! rate at one step to the step sizes of all later ones.

use std::collections::VecDeque;

use crate::csmc::{run_sweep, KernelStrategy, ParticleSweepState, SweepConfig, SweepOutcome};
use crate::error::Result;
use crate::model::Trajectory;
use crate::Prng;

pub const DELTA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaptMode {
    PerTimeStep,
    Global,
}

/// Calibration constants; the defaults are the published operating point
/// (75% target, 5% dead zone, window 100, ρ = 1/2, ρ_min = 1e-3, γ = -1/2).
#[derive(Debug, Clone)]
pub struct AdaptConfig {
    pub target: f64,
    pub dead_zone: f64,
    pub window: usize,
    pub base_rate: f64,
    pub min_rate: f64,
    pub exponent: f64,
    pub mode: AdaptMode,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            target: 0.75,
            dead_zone: 0.05,
            window: 100,
            base_rate: 0.5,
            min_rate: 1e-3,
            exponent: -0.5,
            mode: AdaptMode::PerTimeStep,
        }
    }
}

/// Windowed acceptance history plus the current step sizes.
pub struct AdaptationState {
    config: AdaptConfig,
    history: VecDeque<Vec<bool>>,
    iteration: usize,
    deltas: Vec<f64>,
}

impl AdaptationState {
    pub fn new(config: AdaptConfig, initial_deltas: Vec<f64>) -> Self {
        Self { config, history: VecDeque::new(), iteration: 0, deltas: initial_deltas }
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Windowed acceptance rate per time step.
    pub fn acceptance_rates(&self) -> Vec<f64> {
        let horizon = self.deltas.len();
        let mut rates = vec![0.0; horizon];
        if self.history.is_empty() {
            return rates;
        }
        for row in &self.history {
            for (t, a) in row.iter().enumerate() {
                if *a {
                    rates[t] += 1.0;
                }
            }
        }
        let len = self.history.len() as f64;
        for r in rates.iter_mut() {
            *r /= len;
        }
        rates
    }

    /// Rolls the window by one sweep and updates the step sizes.
    pub fn adapt_step(&mut self, accept_flags: &[bool]) {
        assert_eq!(accept_flags.len(), self.deltas.len());
        self.iteration += 1;
        self.history.push_front(accept_flags.to_vec());
        if self.history.len() > self.config.window {
            self.history.pop_back();
        }
        let rates = self.acceptance_rates();
        let gain = ((self.iteration as f64).powf(self.config.exponent) * self.config.base_rate)
            .max(self.config.min_rate);
        match self.config.mode {
            AdaptMode::PerTimeStep => {
                for t in 0..self.deltas.len() {
                    let err = rates[t] - self.config.target;
                    if err.abs() < self.config.dead_zone {
                        continue;
                    }
                    self.deltas[t] =
                        (self.deltas[t] + gain * err / self.config.target).max(DELTA_FLOOR);
                }
            }
            AdaptMode::Global => {
                let mean_rate = rates.iter().sum::<f64>() / rates.len() as f64;
                let err = mean_rate - self.config.target;
                if err.abs() < self.config.dead_zone {
                    return;
                }
                let updated =
                    (self.deltas[0] + gain * err / self.config.target).max(DELTA_FLOOR);
                for d in self.deltas.iter_mut() {
                    *d = updated;
                }
            }
        }
    }
}

/// Options for one calibrated chain run.
#[derive(Clone)]
pub struct ChainOptions {
    pub sweep: SweepConfig,
    pub adapt: AdaptConfig,
    /// Warm-up sweeps; step sizes adapt during this phase when `calibrate`
    /// is set, and are frozen afterwards.
    pub calibration_iters: usize,
    /// Whether to adapt at all (bootstrap CSMC has nothing to calibrate;
    /// its warm-up sweeps are still run and discarded).
    pub calibrate: bool,
    /// Recorded sweeps after the warm-up phase.
    pub iters: usize,
    /// How often to snapshot the step sizes during calibration (0 = never).
    pub delta_trace_every: usize,
}

/// Everything a chain records: post-warm-up samples, energies, acceptance
/// flags, and the calibration traces.
pub struct ChainOutput {
    pub samples: Vec<Trajectory>,
    pub energies: Vec<f64>,
    pub accept_history: Vec<Vec<bool>>,
    pub delta_trace: Vec<(usize, Vec<f64>)>,
    pub final_deltas: Vec<f64>,
    pub final_trajectory: Trajectory,
    pub seconds_per_iter: f64,
}

/// Runs warm-up with step-size adaptation, freezes the step sizes, then runs
/// and records `iters` sweeps.
pub fn run_calibrated_chain(
    strategy: &dyn KernelStrategy,
    options: &ChainOptions,
    init: &Trajectory,
    rng: &mut Prng,
) -> Result<ChainOutput> {
    let model = strategy.model();
    let horizon = model.horizon();
    let mut config = options.sweep.clone();
    config.validate(horizon)?;
    let mut state = ParticleSweepState::new(horizon, config.n_extra, model.dim());
    let mut adaptation = AdaptationState::new(options.adapt.clone(), config.deltas.clone());
    let mut current = init.clone();
    let mut delta_trace = Vec::new();

    for k in 0..options.calibration_iters {
        let SweepOutcome { trajectory, accept_flags, .. } =
            run_sweep(strategy, &config, &current, &mut state, rng)?;
        current = trajectory;
        if options.calibrate {
            adaptation.adapt_step(&accept_flags);
            config.deltas.copy_from_slice(adaptation.deltas());
            if options.delta_trace_every > 0 && k % options.delta_trace_every == 0 {
                delta_trace.push((k, config.deltas.clone()));
            }
        }
    }

    let mut samples = Vec::with_capacity(options.iters);
    let mut energies = Vec::with_capacity(options.iters);
    let mut accept_history = Vec::with_capacity(options.iters);
    let started = std::time::Instant::now();
    for _ in 0..options.iters {
        let SweepOutcome { trajectory, accept_flags, energy, .. } =
            run_sweep(strategy, &config, &current, &mut state, rng)?;
        current = trajectory.clone();
        samples.push(trajectory);
        energies.push(energy);
        accept_history.push(accept_flags);
    }
    let seconds_per_iter = started.elapsed().as_secs_f64() / options.iters.max(1) as f64;

    Ok(ChainOutput {
        samples,
        energies,
        accept_history,
        delta_trace,
        final_deltas: config.deltas,
        final_trajectory: current,
        seconds_per_iter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state_with(deltas: Vec<f64>, mode: AdaptMode) -> AdaptationState {
        let config = AdaptConfig { mode, ..AdaptConfig::default() };
        AdaptationState::new(config, deltas)
    }

    #[test]
    fn dead_zone_is_a_fixed_point() {
        // Once the window holds exactly 75% acceptance at every position,
        // further sweeps with the same pattern leave the step sizes alone.
        let mut st = state_with(vec![0.01; 4], AdaptMode::PerTimeStep);
        let feed = |st: &mut AdaptationState, k: usize| {
            let flags: Vec<bool> = (0..4).map(|_| k % 4 != 0).collect();
            st.adapt_step(&flags);
        };
        for k in 0..100 {
            feed(&mut st, k);
        }
        let frozen = st.deltas().to_vec();
        for k in 100..400 {
            feed(&mut st, k);
            assert_eq!(st.deltas(), frozen.as_slice(), "delta moved inside the dead zone");
        }
    }

    #[test]
    fn monotone_response_to_all_accepts_and_all_rejects() {
        let mut up = state_with(vec![0.01; 2], AdaptMode::PerTimeStep);
        up.adapt_step(&[true, true]);
        assert!(up.deltas().iter().all(|d| *d > 0.01));

        let mut down = state_with(vec![0.01; 2], AdaptMode::PerTimeStep);
        down.adapt_step(&[false, false]);
        assert!(down.deltas().iter().all(|d| *d < 0.01));
    }

    #[test]
    fn delta_is_floored_under_sustained_rejection() {
        let mut st = state_with(vec![1e-12; 1], AdaptMode::PerTimeStep);
        for _ in 0..50 {
            st.adapt_step(&[false]);
        }
        assert_eq!(st.deltas()[0], DELTA_FLOOR);
    }

    #[test]
    fn global_mode_keeps_a_single_step_size() {
        let mut st = state_with(vec![0.01; 3], AdaptMode::Global);
        for k in 0..50 {
            st.adapt_step(&[k % 2 == 0, true, false]);
        }
        let d = st.deltas();
        assert_eq!(d[0], d[1]);
        assert_eq!(d[1], d[2]);
    }

    #[test]
    fn closed_loop_calibration_reaches_the_target_band() {
        // Synthetic monotone response: acceptance = exp(-δ/δ0), so the
        // α = 0.75 fixed point is δ = -δ0 ln 0.75.
        use rand::Rng as _;
        use rand::SeedableRng as _;
        let mut rng = crate::Prng::seed_from_u64(90);
        let mut st = state_with(vec![0.01; 1], AdaptMode::PerTimeStep);
        let delta0 = 2.0;
        for _ in 0..2000 {
            let p = (-st.deltas()[0] / delta0).exp();
            let accept = rng.random::<f64>() < p;
            st.adapt_step(&[accept]);
        }
        let alpha = (-st.deltas()[0] / delta0).exp();
        assert!(
            (alpha - 0.75).abs() < 0.05,
            "calibrated acceptance {alpha} outside the dead zone"
        );
    }
}
