//! The generic conditional-SMC sweep engine.
//!
//! One sweep embeds the current chain state (the *reference path*) into a
//! particle system at uniformly chosen slots, resamples ancestors
//! conditionally on the reference lineage surviving, proposes the remaining
//! particles from a strategy-supplied mutation kernel, weights all particles,
//! selects the final index by a forced-move step and draws the output path
//! indices backwards. The engine is agnostic to the proposal family: a
//! [`KernelStrategy`] supplies the auxiliary sampler, the mutation kernel,
//! the log-potential and the backward-kernel factor, and declares whether its
//! weights read one or two steps of history.
//!
//! RNG consumption order is fixed so runs are bit-reproducible for a given
//! seed: all auxiliary variables first (ascending `t`), then per time step
//! the reference slot, the ancestor draws (slot-ascending, reference slot
//! skipped) and the proposals (slot-ascending, reference slot skipped),
//! then the forced-move draws and finally one backward draw per step,
//! descending in `t`.

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{log_target, FeynmanKac, Trajectory};
use crate::Prng;

/// Conditional resampling scheme for the non-reference slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resampling {
    /// Each non-reference slot draws its ancestor independently from the
    /// weights.
    Multinomial,
    /// Each non-reference slot keeps its own index with probability
    /// `w^n / max_m w^m` and otherwise redraws from the weights. Lower
    /// variance than multinomial, and degenerates to the identity map under
    /// exactly uniform weights.
    Killing,
}

/// How the output path indices are selected after the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backward {
    BackwardSampling,
    AncestorTracing,
}

/// Whether a strategy's weights read one or two steps of lineage history.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkovOrder {
    First,
    Second,
}

/// Per-sweep tuning parameters shared by all strategies.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    /// Number of proposals in addition to the reference (`N >= 1`).
    pub n_extra: usize,
    /// Per-time-step step sizes, all positive.
    pub deltas: Vec<f64>,
    /// Gradient switch: 1 uses gradient-informed proposals, 0 switches the
    /// gradient terms off.
    pub kappa: f64,
    pub resampling: Resampling,
    pub backward: Backward,
    pub forced_move: bool,
}

impl SweepConfig {
    pub fn new(n_extra: usize, deltas: Vec<f64>) -> Self {
        Self {
            n_extra,
            deltas,
            kappa: 1.0,
            resampling: Resampling::Killing,
            backward: Backward::BackwardSampling,
            forced_move: true,
        }
    }

    pub fn slots(&self) -> usize {
        self.n_extra + 1
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.n_extra == 0 {
            return Err(Error::config("need at least one extra proposal (N >= 1)"));
        }
        if self.deltas.len() != horizon {
            return Err(Error::config(format!(
                "expected {horizon} step sizes, got {}",
                self.deltas.len()
            )));
        }
        if self.deltas.iter().any(|d| d.is_nan() || *d <= 0.0) {
            return Err(Error::config("step sizes must be positive"));
        }
        if self.kappa != 0.0 && self.kappa != 1.0 {
            return Err(Error::config("kappa must be 0 or 1"));
        }
        Ok(())
    }
}

/// A particle together with its surviving lineage, as seen by weight and
/// backward-kernel evaluations.
pub struct LineageView<'a> {
    pub x: &'a DVector<f64>,
    pub x_prev: Option<&'a DVector<f64>>,
    /// Two steps back; only populated for second-order strategies.
    pub x_prev2: Option<&'a DVector<f64>>,
}

/// Per-sweep evaluation context produced by a strategy after the auxiliary
/// variables have been drawn. Immutable during the sweep except for
/// [`prepare_step`](SweepCtx::prepare_step), which runs once per time step
/// before the weights so that O(N) aggregate quantities can be cached.
pub trait SweepCtx {
    /// Draws a proposal for one non-reference slot.
    fn propose(&self, t: usize, ancestor: Option<&DVector<f64>>, rng: &mut Prng) -> DVector<f64>;

    /// Called once per time step after all proposals at `t` are in place and
    /// before any weight is evaluated.
    fn prepare_step(
        &mut self,
        _t: usize,
        _particles: &[DVector<f64>],
        _prev_particles: &[DVector<f64>],
        _ancestors: &[usize],
    ) {
    }

    /// Log-potential `log G'_t` of slot `slot` with lineage `lin`.
    fn log_weight(&self, t: usize, slot: usize, lin: &LineageView) -> f64;

    /// Backward-kernel factor `log Q'_t` evaluated on a candidate lineage.
    fn log_q_factor(&self, t: usize, lin: &LineageView) -> f64;
}

/// A named CSMC proposal/weighting bundle.
pub trait KernelStrategy: Send + Sync {
    fn name(&self) -> &str;

    fn markov_order(&self) -> MarkovOrder {
        MarkovOrder::First
    }

    fn model(&self) -> &dyn FeynmanKac;

    /// Draws all auxiliary variables upfront; they depend only on the
    /// reference path. Strategies without auxiliary variables return `None`.
    fn sample_aux(
        &self,
        reference: &Trajectory,
        config: &SweepConfig,
        rng: &mut Prng,
    ) -> Result<Option<Vec<DVector<f64>>>>;

    /// Precomputes per-sweep quantities (gains, twisted-proposal parameters,
    /// reference-path gradients) and returns the evaluation context.
    fn begin_sweep<'a>(
        &'a self,
        reference: &'a Trajectory,
        aux: Option<&'a [DVector<f64>]>,
        config: &SweepConfig,
    ) -> Result<Box<dyn SweepCtx + 'a>>;
}

/// Particle storage reused across sweeps of one chain.
#[derive(Clone)]
pub struct ParticleSweepState {
    horizon: usize,
    slots: usize,
    particles: Vec<Vec<DVector<f64>>>,
    ancestors: Vec<Vec<usize>>,
    ref_slots: Vec<usize>,
    log_weights: Vec<Vec<f64>>,
    norm_log_weights: Vec<Vec<f64>>,
    aux: Option<Vec<DVector<f64>>>,
}

impl ParticleSweepState {
    pub fn new(horizon: usize, n_extra: usize, dim: usize) -> Self {
        let slots = n_extra + 1;
        Self {
            horizon,
            slots,
            particles: vec![vec![DVector::zeros(dim); slots]; horizon],
            ancestors: vec![vec![0; slots]; horizon.saturating_sub(1)],
            ref_slots: vec![0; horizon],
            log_weights: vec![vec![0.0; slots]; horizon],
            norm_log_weights: vec![vec![0.0; slots]; horizon],
            aux: None,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn particles(&self, t: usize) -> &[DVector<f64>] {
        &self.particles[t]
    }

    pub fn ancestors(&self, t: usize) -> &[usize] {
        &self.ancestors[t]
    }

    pub fn ref_slots(&self) -> &[usize] {
        &self.ref_slots
    }

    pub fn norm_log_weights(&self, t: usize) -> &[f64] {
        &self.norm_log_weights[t]
    }

    pub fn aux(&self) -> Option<&[DVector<f64>]> {
        self.aux.as_deref()
    }

    /// Overwrites the particles at one step (used to assemble states for
    /// the enumeration oracle).
    pub fn set_particles(&mut self, t: usize, particles: Vec<DVector<f64>>) {
        assert_eq!(particles.len(), self.slots);
        self.particles[t] = particles;
    }

    pub fn set_ancestors(&mut self, t: usize, ancestors: Vec<usize>) {
        assert_eq!(ancestors.len(), self.slots);
        assert!(ancestors.iter().all(|a| *a < self.slots));
        self.ancestors[t] = ancestors;
    }

    pub fn set_ref_slot(&mut self, t: usize, slot: usize) {
        assert!(slot < self.slots);
        self.ref_slots[t] = slot;
    }

    /// Sets the step-`t` weights from unnormalised log-weights.
    pub fn set_log_weights(&mut self, t: usize, log_weights: &[f64]) {
        assert_eq!(log_weights.len(), self.slots);
        self.log_weights[t].copy_from_slice(log_weights);
        let lse = log_sum_exp(log_weights);
        for slot in 0..self.slots {
            self.norm_log_weights[t][slot] = log_weights[slot] - lse;
        }
    }
}

/// Result of one sweep.
pub struct SweepOutcome {
    pub trajectory: Trajectory,
    /// Per time step: did the state at `t` change?
    pub accept_flags: Vec<bool>,
    /// `log π_T` of the returned trajectory.
    pub energy: f64,
    /// The selected slot indices `l_{0..T-1}`.
    pub selected: Vec<usize>,
}

/// Runs one CSMC sweep, returning the new trajectory, per-step acceptance
/// flags and its energy.
pub fn run_sweep(
    strategy: &dyn KernelStrategy,
    config: &SweepConfig,
    reference: &Trajectory,
    state: &mut ParticleSweepState,
    rng: &mut Prng,
) -> Result<SweepOutcome> {
    let model = strategy.model();
    let horizon = model.horizon();
    config.validate(horizon)?;
    if reference.len() != horizon || reference.dim() != model.dim() {
        return Err(Error::config("reference path does not match the model shape"));
    }
    if state.horizon != horizon || state.slots != config.slots() {
        return Err(Error::config("sweep state does not match the configuration"));
    }

    state.aux = strategy.sample_aux(reference, config, rng)?;
    let mut ctx = strategy.begin_sweep(reference, state.aux.as_deref(), config)?;
    let slots = config.slots();

    for t in 0..horizon {
        let k = rng.random_range(0..slots);
        state.ref_slots[t] = k;

        if t > 0 {
            let k_prev = state.ref_slots[t - 1];
            let probs = log_weights_to_probs(&state.norm_log_weights[t - 1]);
            let anc = &mut state.ancestors[t - 1];
            anc[k] = k_prev;
            conditional_resample_into(&probs, k, config.resampling, anc, rng);
        }

        // Proposals; the reference is installed bit-identically.
        let (before, from_t) = state.particles.split_at_mut(t);
        let current = &mut from_t[0];
        for slot in 0..slots {
            if slot == k {
                current[slot].clone_from(reference.state(t));
            } else {
                let ancestor = (t > 0).then(|| &before[t - 1][state.ancestors[t - 1][slot]]);
                current[slot] = ctx.propose(t, ancestor, rng);
            }
        }

        let (prev_particles, ancestors): (&[DVector<f64>], &[usize]) = if t > 0 {
            (&state.particles[t - 1], &state.ancestors[t - 1])
        } else {
            (&[], &[])
        };
        ctx.prepare_step(t, &state.particles[t], prev_particles, ancestors);

        for slot in 0..slots {
            let lin = lineage_at(state, t, slot, strategy.markov_order());
            let lw = ctx.log_weight(t, slot, &lin);
            if !lw.is_finite() {
                return Err(Error::Weight { t, slot, value: lw });
            }
            state.log_weights[t][slot] = lw;
        }
        let lse = log_sum_exp(&state.log_weights[t]);
        if !lse.is_finite() {
            return Err(Error::Weight { t, slot: 0, value: lse });
        }
        for slot in 0..slots {
            state.norm_log_weights[t][slot] = state.log_weights[t][slot] - lse;
        }
    }

    // Final-index selection and backward pass.
    let last = horizon - 1;
    let last_probs = log_weights_to_probs(&state.norm_log_weights[last]);
    let l_last = forced_move_select(&last_probs, state.ref_slots[last], config.forced_move, rng);
    let selected = match config.backward {
        Backward::AncestorTracing => ancestor_trace(state, l_last),
        Backward::BackwardSampling => match strategy.markov_order() {
            MarkovOrder::First => backward_sample_first_order(state, ctx.as_ref(), l_last, rng),
            MarkovOrder::Second => backward_sample_second_order(state, ctx.as_ref(), l_last, rng),
        },
    };

    let states: Vec<DVector<f64>> =
        (0..horizon).map(|t| state.particles[t][selected[t]].clone()).collect();
    let trajectory = Trajectory::new(states)?;
    let accept_flags: Vec<bool> = (0..horizon)
        .map(|t| selected[t] != state.ref_slots[t] || trajectory.state(t) != reference.state(t))
        .collect();
    let energy = log_target(model, &trajectory)?;
    Ok(SweepOutcome { trajectory, accept_flags, energy, selected })
}

fn lineage_at<'a>(
    state: &'a ParticleSweepState,
    t: usize,
    slot: usize,
    order: MarkovOrder,
) -> LineageView<'a> {
    let x = &state.particles[t][slot];
    let x_prev = (t > 0).then(|| {
        let a = state.ancestors[t - 1][slot];
        &state.particles[t - 1][a]
    });
    let x_prev2 = match order {
        MarkovOrder::First => None,
        MarkovOrder::Second => (t > 1).then(|| {
            let a = state.ancestors[t - 1][slot];
            let g = state.ancestors[t - 2][a];
            &state.particles[t - 2][g]
        }),
    };
    LineageView { x, x_prev, x_prev2 }
}

/// Numerically stable `log Σ exp`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

fn log_weights_to_probs(norm_log_weights: &[f64]) -> Vec<f64> {
    norm_log_weights.iter().map(|lw| lw.exp()).collect()
}

/// Draws an index from a (normalised) probability vector.
pub fn sample_categorical(probs: &[f64], rng: &mut Prng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Conditionally resamples the ancestors of all slots other than
/// `keep_slot`, writing into `ancestors`; the entry at `keep_slot` is left
/// untouched. `probs` are the normalised weights of the previous step.
pub fn conditional_resample_into(
    probs: &[f64],
    keep_slot: usize,
    scheme: Resampling,
    ancestors: &mut [usize],
    rng: &mut Prng,
) {
    debug_assert_eq!(probs.len(), ancestors.len());
    match scheme {
        Resampling::Multinomial => {
            for slot in 0..ancestors.len() {
                if slot == keep_slot {
                    continue;
                }
                ancestors[slot] = sample_categorical(probs, rng);
            }
        }
        Resampling::Killing => {
            let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for slot in 0..ancestors.len() {
                if slot == keep_slot {
                    continue;
                }
                let keep_prob = if max > 0.0 { probs[slot] / max } else { 1.0 };
                let u: f64 = rng.random();
                ancestors[slot] =
                    if u < keep_prob { slot } else { sample_categorical(probs, rng) };
            }
        }
    }
}

/// Convenience wrapper over [`conditional_resample_into`] that maps the
/// reference slot to itself.
pub fn conditional_resample(
    probs: &[f64],
    keep_slot: usize,
    scheme: Resampling,
    rng: &mut Prng,
) -> Vec<usize> {
    let mut ancestors: Vec<usize> = (0..probs.len()).collect();
    conditional_resample_into(probs, keep_slot, scheme, &mut ancestors, rng);
    ancestors
}

/// Forced-move selection of the final index: proposes a non-reference slot
/// `i` with probability `W_i / (1 - W_k)` and accepts it with probability
/// `1 ∧ (1 - W_k)/(1 - W_i)`, falling back to the reference slot on
/// rejection. With `forced == false`, draws directly from the weights.
///
/// If `1 - W_k` underflows the reference slot is returned deterministically
/// (the move away is then impossible anyway).
pub fn forced_move_select(probs: &[f64], k: usize, forced: bool, rng: &mut Prng) -> usize {
    if !forced {
        return sample_categorical(probs, rng);
    }
    let residual = 1.0 - probs[k];
    if residual <= 1e-300 {
        return k;
    }
    let mut others: Vec<f64> = probs.to_vec();
    others[k] = 0.0;
    for p in others.iter_mut() {
        *p /= residual;
    }
    let candidate = sample_categorical(&others, rng);
    let ratio = residual / (1.0 - probs[candidate]);
    let u: f64 = rng.random();
    if u < ratio {
        candidate
    } else {
        k
    }
}

/// Backward sampling for first-order strategies:
/// `l_t ∝ W_t^i · Q'_{t+1}(x_t^i, x_{t+1}^{l_{t+1}})`.
pub fn backward_sample_first_order(
    state: &ParticleSweepState,
    ctx: &dyn SweepCtx,
    l_last: usize,
    rng: &mut Prng,
) -> Vec<usize> {
    let horizon = state.horizon;
    let mut selected = vec![0usize; horizon];
    selected[horizon - 1] = l_last;
    for t in (0..horizon - 1).rev() {
        let next = &state.particles[t + 1][selected[t + 1]];
        let logits: Vec<f64> = (0..state.slots)
            .map(|i| {
                let lin = LineageView {
                    x: next,
                    x_prev: Some(&state.particles[t][i]),
                    x_prev2: None,
                };
                state.norm_log_weights[t][i] + ctx.log_q_factor(t + 1, &lin)
            })
            .collect();
        selected[t] = sample_from_logits(&logits, rng);
    }
    selected
}

/// Backward sampling for second-order strategies: each candidate is scored
/// by the two backward-kernel factors that read its state,
/// `Q'_{t+1}((x_{t-1:t}^{(i)}, x_{t+1}^{l})) · Q'_{t+2}((x_t^i, x_{t+1}^{l}, x_{t+2}^{l}))`,
/// with factors past the horizon ignored.
pub fn backward_sample_second_order(
    state: &ParticleSweepState,
    ctx: &dyn SweepCtx,
    l_last: usize,
    rng: &mut Prng,
) -> Vec<usize> {
    let horizon = state.horizon;
    let mut selected = vec![0usize; horizon];
    selected[horizon - 1] = l_last;
    for t in (0..horizon - 1).rev() {
        let next = &state.particles[t + 1][selected[t + 1]];
        let logits: Vec<f64> = (0..state.slots)
            .map(|i| {
                let prev = (t > 0).then(|| {
                    let a = state.ancestors[t - 1][i];
                    &state.particles[t - 1][a]
                });
                let lin1 = LineageView {
                    x: next,
                    x_prev: Some(&state.particles[t][i]),
                    x_prev2: prev,
                };
                let mut logit = state.norm_log_weights[t][i] + ctx.log_q_factor(t + 1, &lin1);
                if t + 2 < horizon {
                    let next2 = &state.particles[t + 2][selected[t + 2]];
                    let lin2 = LineageView {
                        x: next2,
                        x_prev: Some(next),
                        x_prev2: Some(&state.particles[t][i]),
                    };
                    logit += ctx.log_q_factor(t + 2, &lin2);
                }
                logit
            })
            .collect();
        selected[t] = sample_from_logits(&logits, rng);
    }
    selected
}

/// Deterministic lineage readout `l_t = a_t^{l_{t+1}}`.
pub fn ancestor_trace(state: &ParticleSweepState, l_last: usize) -> Vec<usize> {
    let horizon = state.horizon;
    let mut selected = vec![0usize; horizon];
    selected[horizon - 1] = l_last;
    for t in (0..horizon - 1).rev() {
        selected[t] = state.ancestors[t][selected[t + 1]];
    }
    selected
}

fn sample_from_logits(logits: &[f64], rng: &mut Prng) -> usize {
    let lse = log_sum_exp(logits);
    let probs: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
    sample_categorical(&probs, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> Prng {
        Prng::seed_from_u64(seed)
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert!((log_sum_exp(&[0.0, 0.0]) - 2.0f64.ln()).abs() < 1e-14);
        let lse = log_sum_exp(&[-1e10, 0.0]);
        assert!((lse - 0.0).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn multinomial_resample_uniform_weights_chi_square() {
        let mut r = rng(100);
        let slots = 4;
        let probs = vec![0.25; slots];
        let draws = 100_000;
        let mut counts = vec![0usize; slots];
        for _ in 0..draws {
            let anc = conditional_resample(&probs, 0, Resampling::Multinomial, &mut r);
            for (slot, a) in anc.iter().enumerate() {
                if slot != 0 {
                    counts[*a] += 1;
                }
            }
        }
        let total = (draws * (slots - 1)) as f64;
        let expect = total / slots as f64;
        let chi2: f64 = counts.iter().map(|c| (*c as f64 - expect).powi(2) / expect).sum();
        // 3 degrees of freedom; 1% critical value is 11.34.
        assert!(chi2 < 11.34, "chi-square statistic {chi2}");
    }

    #[test]
    fn killing_keeps_own_index_under_uniform_weights() {
        let mut r = rng(101);
        let probs = vec![0.2; 5];
        for _ in 0..100 {
            let anc = conditional_resample(&probs, 2, Resampling::Killing, &mut r);
            assert_eq!(anc, vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn killing_collapses_onto_dominant_weight() {
        let mut r = rng(102);
        let mut probs = vec![1e-12; 4];
        probs[3] = 1.0 - 3e-12;
        let mut all_to_three = 0;
        let trials = 2000;
        for _ in 0..trials {
            let anc = conditional_resample(&probs, 3, Resampling::Killing, &mut r);
            if (0..3).all(|slot| anc[slot] == 3) {
                all_to_three += 1;
            }
        }
        assert!(all_to_three as f64 / trials as f64 > 0.999);
    }

    #[test]
    fn forced_move_two_slot_metropolis_ratio() {
        // With two slots, P(move | k=0) = 1 ∧ w1/w0.
        let mut r = rng(103);
        for (w0, w1) in [(0.8, 0.2), (0.3, 0.7), (0.5, 0.5)] {
            let probs = vec![w0, w1];
            let trials = 200_000;
            let mut moved = 0usize;
            for _ in 0..trials {
                if forced_move_select(&probs, 0, true, &mut r) == 1 {
                    moved += 1;
                }
            }
            let expect = (w1 / w0).min(1.0);
            let rate = moved as f64 / trials as f64;
            let se = (expect * (1.0 - expect) / trials as f64).sqrt().max(1e-4);
            assert!((rate - expect).abs() < 4.0 * se, "rate {rate} vs {expect}");
        }
    }

    #[test]
    fn forced_move_uniform_weights_always_moves() {
        // Uniform weights: acceptance ratio is 1, so each other slot gets
        // probability 1/N; moving away from the reference is certain.
        let mut r = rng(104);
        let probs = vec![0.25; 4];
        let trials = 120_000;
        let mut counts = [0usize; 4];
        for _ in 0..trials {
            counts[forced_move_select(&probs, 1, true, &mut r)] += 1;
        }
        assert_eq!(counts[1], 0);
        for slot in [0usize, 2, 3] {
            let rate = counts[slot] as f64 / trials as f64;
            assert!((rate - 1.0 / 3.0).abs() < 0.01, "slot {slot} rate {rate}");
        }
    }

    #[test]
    fn forced_move_sticks_at_degenerate_reference_weight() {
        let mut r = rng(105);
        let probs = vec![1.0 - 1e-320, 1e-320];
        for _ in 0..50 {
            assert_eq!(forced_move_select(&probs, 0, true, &mut r), 0);
        }
    }

    #[test]
    fn ancestor_trace_identity_and_replay() {
        let mut state = ParticleSweepState::new(4, 2, 1);
        // Identity ancestry: l_t = l_last everywhere.
        for t in 0..3 {
            state.ancestors[t] = vec![0, 1, 2];
        }
        assert_eq!(ancestor_trace(&state, 2), vec![2, 2, 2, 2]);

        // Random ancestry replayed by hand:
        // ancestors[2] = [1,0,2], ancestors[1] = [2,2,0], ancestors[0] = [0,1,1].
        state.ancestors[2] = vec![1, 0, 2];
        state.ancestors[1] = vec![2, 2, 0];
        state.ancestors[0] = vec![0, 1, 1];
        // l_3 = 0 -> l_2 = 1 -> l_1 = 2 -> l_0 = 1.
        assert_eq!(ancestor_trace(&state, 0), vec![1, 2, 1, 0]);
    }

    #[test]
    fn reference_lineage_traces_to_ref_slots() {
        let mut state = ParticleSweepState::new(3, 2, 1);
        state.ref_slots = vec![2, 0, 1];
        for t in 0..2 {
            for slot in 0..3 {
                state.ancestors[t][slot] = slot;
            }
            state.ancestors[t][state.ref_slots[t + 1]] = state.ref_slots[t];
        }
        let l = ancestor_trace(&state, state.ref_slots[2]);
        assert_eq!(l, state.ref_slots);
    }
}
