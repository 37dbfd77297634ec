//! Exhaustive enumeration of the backward-sampling law over index paths,
//! for small particle systems (intended for `T <= 4`, `N <= 3`).

use crate::csmc::{
    forced_move_select, log_sum_exp, LineageView, MarkovOrder, ParticleSweepState, SweepCtx,
};
use crate::Prng;

/// Flattened index of a path `l_{0..T-1}` with `slots` slots per step.
pub fn path_index(selected: &[usize], slots: usize) -> usize {
    selected.iter().fold(0usize, |acc, l| acc * slots + l)
}

/// Exact probability of every index path under the final-index selection
/// followed by backward sampling, in [`path_index`] order.
///
/// The final index law is the forced-move kernel when `forced_move` is set,
/// otherwise the normalised final weights. Second-order strategies score
/// each candidate with both backward factors that read its state.
pub fn enumerate_backward(
    state: &ParticleSweepState,
    ctx: &dyn SweepCtx,
    order: MarkovOrder,
    forced_move: bool,
) -> Vec<f64> {
    let horizon = state.horizon();
    let slots = state.slots();
    let n_paths = slots.pow(horizon as u32);
    let mut probs = vec![0.0; n_paths];

    let last_law = final_index_law(state, forced_move);

    let mut path = vec![0usize; horizon];
    for idx in 0..n_paths {
        // Decode the path.
        let mut rem = idx;
        for t in (0..horizon).rev() {
            path[t] = rem % slots;
            rem /= slots;
        }
        let mut p = last_law[path[horizon - 1]];
        for t in (0..horizon - 1).rev() {
            let logits: Vec<f64> =
                (0..slots).map(|i| backward_logit(state, ctx, order, t, i, &path)).collect();
            let lse = log_sum_exp(&logits);
            p *= (logits[path[t]] - lse).exp();
        }
        probs[idx] = p;
    }
    probs
}

/// The law of `l_{T-1}` given the final weights and reference slot.
fn final_index_law(state: &ParticleSweepState, forced_move: bool) -> Vec<f64> {
    let last = state.horizon() - 1;
    let slots = state.slots();
    let k = state.ref_slots()[last];
    let weights: Vec<f64> = state.norm_log_weights(last).iter().map(|lw| lw.exp()).collect();
    if !forced_move {
        return weights;
    }
    let residual = 1.0 - weights[k];
    let mut law = vec![0.0; slots];
    if residual <= 1e-300 {
        law[k] = 1.0;
        return law;
    }
    let mut stay = 1.0;
    for i in 0..slots {
        if i == k {
            continue;
        }
        let accept = (residual / (1.0 - weights[i])).min(1.0);
        law[i] = weights[i] / residual * accept;
        stay -= law[i];
    }
    law[k] = stay.max(0.0);
    law
}

fn backward_logit(
    state: &ParticleSweepState,
    ctx: &dyn SweepCtx,
    order: MarkovOrder,
    t: usize,
    candidate: usize,
    path: &[usize],
) -> f64 {
    let horizon = state.horizon();
    let next = &state.particles(t + 1)[path[t + 1]];
    let prev = match order {
        MarkovOrder::First => None,
        MarkovOrder::Second => (t > 0).then(|| {
            let a = state.ancestors(t - 1)[candidate];
            &state.particles(t - 1)[a]
        }),
    };
    let lin1 = LineageView { x: next, x_prev: Some(&state.particles(t)[candidate]), x_prev2: prev };
    let mut logit = state.norm_log_weights(t)[candidate] + ctx.log_q_factor(t + 1, &lin1);
    if matches!(order, MarkovOrder::Second) && t + 2 < horizon {
        let next2 = &state.particles(t + 2)[path[t + 2]];
        let lin2 =
            LineageView { x: next2, x_prev: Some(next), x_prev2: Some(&state.particles(t)[candidate]) };
        logit += ctx.log_q_factor(t + 2, &lin2);
    }
    logit
}

/// Samples the final index the same way a sweep does; exposed so sampler
/// frequencies can be compared against [`enumerate_backward`].
pub fn sample_final_index(state: &ParticleSweepState, forced_move: bool, rng: &mut Prng) -> usize {
    let last = state.horizon() - 1;
    let probs: Vec<f64> = state.norm_log_weights(last).iter().map(|lw| lw.exp()).collect();
    forced_move_select(&probs, state.ref_slots()[last], forced_move, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    /// A context with constant transitions; the backward law then only sees
    /// the weights.
    struct FlatCtx;
    impl SweepCtx for FlatCtx {
        fn propose(&self, _: usize, _: Option<&DVector<f64>>, _: &mut Prng) -> DVector<f64> {
            DVector::zeros(1)
        }
        fn log_weight(&self, _: usize, _: usize, _: &LineageView) -> f64 {
            0.0
        }
        fn log_q_factor(&self, _: usize, _: &LineageView) -> f64 {
            0.0
        }
    }

    fn uniform_state(horizon: usize, n_extra: usize) -> ParticleSweepState {
        // All weights equal; ancestors arbitrary (identity).
        let state = ParticleSweepState::new(horizon, n_extra, 1);
        state
    }

    #[test]
    fn uniform_factors_give_uniform_paths_without_forced_move() {
        let horizon = 3;
        let state = uniform_state(horizon, 2);
        // norm_log_weights default to 0.0 = log 1, not normalised; fix them.
        let mut state = state;
        normalise_weights(&mut state);
        let probs = enumerate_backward(&state, &FlatCtx, MarkovOrder::First, false);
        let expect = 1.0 / probs.len() as f64;
        for p in &probs {
            assert!((p - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_weights_give_dirac_path() {
        let mut state = uniform_state(2, 1);
        set_weights(&mut state, 0, &[1e-30, 1.0]);
        set_weights(&mut state, 1, &[1e-30, 1.0]);
        let probs = enumerate_backward(&state, &FlatCtx, MarkovOrder::First, false);
        let idx = path_index(&[1, 1], 2);
        assert!((probs[idx] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn probabilities_sum_to_one_with_forced_move() {
        let mut state = uniform_state(3, 2);
        set_weights(&mut state, 0, &[0.2, 0.5, 0.3]);
        set_weights(&mut state, 1, &[0.1, 0.1, 0.8]);
        set_weights(&mut state, 2, &[0.4, 0.4, 0.2]);
        let probs = enumerate_backward(&state, &FlatCtx, MarkovOrder::First, true);
        let total: f64 = probs.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    fn normalise_weights(state: &mut ParticleSweepState) {
        let horizon = state.horizon();
        let slots = state.slots();
        for t in 0..horizon {
            set_weights_inner(state, t, &vec![1.0 / slots as f64; slots]);
        }
    }

    fn set_weights(state: &mut ParticleSweepState, t: usize, probs: &[f64]) {
        set_weights_inner(state, t, probs);
    }

    fn set_weights_inner(state: &mut ParticleSweepState, t: usize, probs: &[f64]) {
        let logw: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        state.set_log_weights(t, &logw);
    }
}
