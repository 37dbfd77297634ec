//! Prior-gain proposals for conditionally Gaussian dynamics.
//!
//! Conditionally on the auxiliary variable `u_t`, each particle is proposed
//! from the exact conditional of `x_t ~ N(m_t(x_{t-1}), C_t(x_{t-1}))` given
//! the pseudo observation `u_t ~ N(x_t, (δ_t/2) I)`:
//!
//! ```text
//! M'_t(x | x_prev; u) = N(x; m + A (u - m), (δ_t/2) A),
//! A = (C + (δ_t/2) I)^{-1} C,   m = m_t(x_prev).
//! ```
//!
//! With constant covariances the eigendecomposition of each `C_t` is cached
//! at construction, so a change of step size only refreshes the gain
//! eigenvalues `2λ/(2λ+δ)` and every per-particle operation stays O(D²).
//! State-dependent covariances fall back to a per-ancestor
//! eigendecomposition (cubic in D, as expected).
//!
//! Flavours: `Aux` keeps the auxiliary variable in the weights, `Marginal`
//! integrates it out (requires constant covariances for O(N) weights) and
//! `AuxSmoothing` drifts along the smoothing-potential gradient, making the
//! weights second-order Markov.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{gradient_shift, iso_shift_log_ratio};
use crate::csmc::{KernelStrategy, LineageView, MarkovOrder, SweepConfig, SweepCtx};
use crate::error::{Error, Result};
use crate::gauss::{self, SpdMatrix, SpectralCache, LN_2PI};
use crate::model::{grad_potential_smoothing, FeynmanKac, GaussianDynamics, Trajectory};
use crate::Prng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainFlavor {
    Aux,
    Marginal,
    AuxSmoothing,
}

pub struct GainStrategy {
    model: Arc<dyn FeynmanKac>,
    dynamics: Arc<dyn GaussianDynamics>,
    flavor: GainFlavor,
    /// Eigen caches of the per-step covariances; present iff constant.
    spectral: Option<Vec<SpectralCache>>,
}

impl GainStrategy {
    pub fn new(
        model: Arc<dyn FeynmanKac>,
        dynamics: Arc<dyn GaussianDynamics>,
        flavor: GainFlavor,
    ) -> Result<Self> {
        if model.decomposition().is_none() {
            return Err(Error::config("gain strategies require a potential decomposition"));
        }
        if flavor == GainFlavor::Marginal && !dynamics.constant_cov() {
            return Err(Error::config(
                "the marginal gain strategy requires constant covariances C_t(x) = C_t",
            ));
        }
        let spectral = if dynamics.constant_cov() {
            let caches = (0..dynamics.horizon())
                .map(|t| {
                    SpdMatrix::new(dynamics.cov(t, None)).map(|c| SpectralCache::new(&c))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(caches)
        } else {
            None
        };
        Ok(Self { model, dynamics, flavor, spectral })
    }

    fn potential_shift(
        &self,
        t: usize,
        kappa: f64,
        delta: f64,
        x_prev: Option<&DVector<f64>>,
        x: &DVector<f64>,
        x_next: Option<&DVector<f64>>,
    ) -> DVector<f64> {
        let decomp = self.model.decomposition().expect("checked at construction");
        match self.flavor {
            GainFlavor::Aux | GainFlavor::Marginal => {
                gradient_shift(kappa, delta, self.model.dim(), || {
                    decomp.grad_log_g_x(t, x_prev, x)
                })
            }
            GainFlavor::AuxSmoothing => gradient_shift(kappa, delta, self.model.dim(), || {
                grad_potential_smoothing(self.model.as_ref(), t, x_prev, x, x_next)
                    .expect("decomposition checked at construction")
            }),
        }
    }

    /// Marginal law of one non-reference slot's proposal given its ancestor,
    /// with the auxiliary draw integrated out:
    /// `N((I-A)m + A(x_ref + φ), (δ/2)(A² + A))`.
    pub fn slot_marginal_moments(
        &self,
        t: usize,
        ancestor: Option<&DVector<f64>>,
        ref_prev: Option<&DVector<f64>>,
        ref_state: &DVector<f64>,
        delta: f64,
        kappa: f64,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let cov = SpdMatrix::new(self.dynamics.cov(t, ancestor))?;
        let gain = gauss::gain_matrix(&cov, delta, None);
        let spread = gauss::marginal_proposal_cov(&gain, delta);
        let prior_mean = self.dynamics.mean(t, ancestor);
        let decomp = self.model.decomposition().expect("checked at construction");
        let shift = gradient_shift(kappa, delta, self.model.dim(), || {
            decomp.grad_log_g_x(t, ref_prev, ref_state)
        });
        let mean = &prior_mean + &gain * (ref_state + shift - &prior_mean);
        Ok((mean, spread))
    }
}

impl KernelStrategy for GainStrategy {
    fn name(&self) -> &str {
        match self.flavor {
            GainFlavor::Aux => {
                if self.model.horizon() == 1 {
                    "agrad1"
                } else {
                    "p-agrad"
                }
            }
            GainFlavor::Marginal => "p-mgrad",
            GainFlavor::AuxSmoothing => "p-agrad+",
        }
    }

    fn markov_order(&self) -> MarkovOrder {
        match self.flavor {
            GainFlavor::AuxSmoothing => MarkovOrder::Second,
            _ => MarkovOrder::First,
        }
    }

    fn model(&self) -> &dyn FeynmanKac {
        self.model.as_ref()
    }

    fn sample_aux(
        &self,
        reference: &Trajectory,
        config: &SweepConfig,
        rng: &mut Prng,
    ) -> Result<Option<Vec<DVector<f64>>>> {
        let horizon = reference.len();
        let mut aux = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let x_prev = (t > 0).then(|| reference.state(t - 1));
            let x_next = (t + 1 < horizon).then(|| reference.state(t + 1));
            let shift = self.potential_shift(
                t,
                config.kappa,
                config.deltas[t],
                x_prev,
                reference.state(t),
                x_next,
            );
            let sd = (0.5 * config.deltas[t]).sqrt();
            aux.push(
                reference.state(t)
                    + shift
                    + gauss::std_normal_vector(self.model.dim(), rng) * sd,
            );
        }
        Ok(Some(aux))
    }

    fn begin_sweep<'a>(
        &'a self,
        _reference: &'a Trajectory,
        aux: Option<&'a [DVector<f64>]>,
        config: &SweepConfig,
    ) -> Result<Box<dyn SweepCtx + 'a>> {
        let steps = self
            .spectral
            .as_ref()
            .map(|caches| {
                caches
                    .iter()
                    .enumerate()
                    .map(|(t, c)| GainStep::from_cache(c, config.deltas[t]))
                    .collect::<Vec<_>>()
            });
        Ok(Box::new(GainCtx {
            strategy: self,
            aux: aux.expect("gain strategies always sample auxiliary variables"),
            deltas: config.deltas.clone(),
            kappa: config.kappa,
            n_extra: config.n_extra,
            steps,
            marginal: None,
        }))
    }
}

/// The conditional-proposal operator at one time step, held in the
/// eigenbasis of the process covariance.
pub(crate) struct GainStep {
    basis: DMatrix<f64>,
    gains: DVector<f64>,
    half_delta: f64,
    sqrt_cond: DVector<f64>,
    log_norm: f64,
}

impl GainStep {
    pub(crate) fn from_cache(cache: &SpectralCache, delta: f64) -> Self {
        let half_delta = 0.5 * delta;
        let gains = cache.gain_eigenvalues(delta);
        let sqrt_cond = gains.map(|a| (half_delta * a).sqrt());
        let log_norm =
            -0.5 * gains.iter().map(|a| LN_2PI + (half_delta * a).ln()).sum::<f64>();
        Self { basis: cache.eigenvectors().clone(), gains, half_delta, sqrt_cond, log_norm }
    }

    fn from_cov(cov: DMatrix<f64>, delta: f64) -> Result<Self> {
        let spd = SpdMatrix::new(cov)?;
        Ok(Self::from_cache(&SpectralCache::new(&spd), delta))
    }

    fn rotate(&self, v: &DVector<f64>) -> DVector<f64> {
        self.basis.tr_mul(v)
    }

    fn unrotate(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.basis * w
    }

    /// `m + A (u - m)`.
    fn cond_mean(&self, prior_mean: &DVector<f64>, aux: &DVector<f64>) -> DVector<f64> {
        let w = self.rotate(&(aux - prior_mean));
        prior_mean + self.unrotate(&w.component_mul(&self.gains))
    }

    fn sample_around(&self, mean: &DVector<f64>, rng: &mut Prng) -> DVector<f64> {
        let z = gauss::std_normal_vector(mean.len(), rng);
        mean + self.unrotate(&z.component_mul(&self.sqrt_cond))
    }

    /// `log N(x; mean, (δ/2) A)`.
    fn logpdf(&self, x: &DVector<f64>, mean: &DVector<f64>) -> f64 {
        let w = self.rotate(&(x - mean));
        let mut quad = 0.0;
        for d in 0..w.len() {
            quad += w[d] * w[d] / (self.half_delta * self.gains[d]);
        }
        self.log_norm - 0.5 * quad
    }
}

/// Per-step aggregates for the marginal (O(N)) weight factor.
struct MarginalScratch {
    t: usize,
    /// `v^n = (I - A) m_t(ancestor of n)` per slot.
    offsets: Vec<DVector<f64>>,
    /// `Uᵀ(x̄ - v̄)`.
    rot_mean_diff: DVector<f64>,
    /// Eigenvalues of `G = (2/δ)(I + N A)^{-1}`.
    g: DVector<f64>,
    /// Eigenvalues of `D^{-1} + G`.
    m1: DVector<f64>,
    /// Eigenvalues of `A G`.
    m2: DVector<f64>,
}

struct GainCtx<'a> {
    strategy: &'a GainStrategy,
    aux: &'a [DVector<f64>],
    deltas: Vec<f64>,
    kappa: f64,
    n_extra: usize,
    steps: Option<Vec<GainStep>>,
    marginal: Option<MarginalScratch>,
}

enum StepRef<'s> {
    Borrowed(&'s GainStep),
    Owned(GainStep),
}

impl std::ops::Deref for StepRef<'_> {
    type Target = GainStep;
    fn deref(&self) -> &GainStep {
        match self {
            StepRef::Borrowed(s) => s,
            StepRef::Owned(s) => s,
        }
    }
}

impl GainCtx<'_> {
    fn step_for(&self, t: usize, ancestor: Option<&DVector<f64>>) -> StepRef<'_> {
        match &self.steps {
            Some(steps) => StepRef::Borrowed(&steps[t]),
            // State-dependent covariance: cubic-cost per-ancestor gains.
            None => StepRef::Owned(
                GainStep::from_cov(self.strategy.dynamics.cov(t, ancestor), self.deltas[t])
                    .expect("state-dependent covariance must be SPD"),
            ),
        }
    }

    fn filter_potential_shift(&self, t: usize, lin: &LineageView) -> DVector<f64> {
        let decomp = self.strategy.model.decomposition().expect("checked");
        gradient_shift(self.kappa, self.deltas[t], self.strategy.model.dim(), || {
            decomp.grad_log_g_x(t, lin.x_prev, lin.x)
        })
    }

    /// Auxiliary density ratio at `t-1`: smoothing- vs filter-potential
    /// gradients on the candidate lineage.
    fn smoothing_ratio(&self, t: usize, lin: &LineageView) -> f64 {
        debug_assert!(t > 0);
        let model = self.strategy.model.as_ref();
        let decomp = model.decomposition().expect("checked");
        let prev = lin.x_prev.expect("second-order weights need the previous state");
        if self.kappa == 0.0 {
            return 0.0;
        }
        let scale = self.kappa * 0.5 * self.deltas[t - 1];
        let filter = decomp.grad_log_g_x(t - 1, lin.x_prev2, prev) * scale;
        let smooth = &filter + decomp.grad_log_g_xprev(t, prev, lin.x) * scale;
        let var = 0.5 * self.deltas[t - 1];
        let u = &self.aux[t - 1];
        iso_shift_log_ratio(u, prev, &smooth, var) - iso_shift_log_ratio(u, prev, &filter, var)
    }

    /// `log Q_t + log N(u_t; x + φ, (δ_t/2) I)`, the shared part of the
    /// auxiliary weight and of the backward-kernel factor (the proposal
    /// density cancels between them).
    fn aux_numerator(&self, t: usize, lin: &LineageView) -> f64 {
        let model = self.strategy.model.as_ref();
        let shift = self.filter_potential_shift(t, lin);
        model.log_q(t, lin.x_prev, lin.x)
            + gauss::iso_logpdf(&self.aux[t], &(lin.x + shift), 0.5 * self.deltas[t])
    }
}

impl SweepCtx for GainCtx<'_> {
    fn propose(&self, t: usize, ancestor: Option<&DVector<f64>>, rng: &mut Prng) -> DVector<f64> {
        let step = self.step_for(t, ancestor);
        let prior_mean = self.strategy.dynamics.mean(t, ancestor);
        let mean = step.cond_mean(&prior_mean, &self.aux[t]);
        step.sample_around(&mean, rng)
    }

    fn prepare_step(
        &mut self,
        t: usize,
        particles: &[DVector<f64>],
        prev_particles: &[DVector<f64>],
        ancestors: &[usize],
    ) {
        if self.strategy.flavor != GainFlavor::Marginal {
            return;
        }
        let steps = self.steps.as_ref().expect("marginal flavour has constant covariances");
        let step = &steps[t];
        let slots = particles.len();
        let dim = particles[0].len();

        let mut offsets = Vec::with_capacity(slots);
        let mut offset_mean = DVector::zeros(dim);
        let mut particle_mean = DVector::zeros(dim);
        for slot in 0..slots {
            let ancestor = (t > 0).then(|| &prev_particles[ancestors[slot]]);
            let prior_mean = self.strategy.dynamics.mean(t, ancestor);
            // v = (I - A) m in the eigenbasis.
            let w = step.rotate(&prior_mean);
            let complement = DVector::from_fn(dim, |d, _| (1.0 - step.gains[d]) * w[d]);
            let v = step.unrotate(&complement);
            offset_mean += &v;
            particle_mean += &particles[slot];
            offsets.push(v);
        }
        offset_mean /= slots as f64;
        particle_mean /= slots as f64;
        let rot_mean_diff = step.rotate(&(particle_mean - offset_mean));

        let n = self.n_extra as f64;
        let inv_half = 1.0 / step.half_delta;
        let g = DVector::from_fn(dim, |d, _| inv_half / (1.0 + n * step.gains[d]));
        let m1 = DVector::from_fn(dim, |d, _| inv_half / step.gains[d] + g[d]);
        let m2 = DVector::from_fn(dim, |d, _| step.gains[d] * g[d]);
        self.marginal = Some(MarginalScratch { t, offsets, rot_mean_diff, g, m1, m2 });
    }

    fn log_weight(&self, t: usize, slot: usize, lin: &LineageView) -> f64 {
        let model = self.strategy.model.as_ref();
        match self.strategy.flavor {
            GainFlavor::Aux => {
                let step = self.step_for(t, lin.x_prev);
                let prior_mean = self.strategy.dynamics.mean(t, lin.x_prev);
                let mean = step.cond_mean(&prior_mean, &self.aux[t]);
                self.aux_numerator(t, lin) - step.logpdf(lin.x, &mean)
            }
            GainFlavor::AuxSmoothing => {
                let step = self.step_for(t, lin.x_prev);
                let prior_mean = self.strategy.dynamics.mean(t, lin.x_prev);
                let mean = step.cond_mean(&prior_mean, &self.aux[t]);
                let mut lw = self.aux_numerator(t, lin) - step.logpdf(lin.x, &mean);
                if t > 0 {
                    lw += self.smoothing_ratio(t, lin);
                }
                lw
            }
            GainFlavor::Marginal => {
                let scratch = self.marginal.as_ref().expect("prepare_step ran");
                debug_assert_eq!(scratch.t, t);
                let steps = self.steps.as_ref().expect("constant covariances");
                let step = &steps[t];
                let shift = self.filter_potential_shift(t, lin);
                let w1 = step.rotate(&(lin.x - &scratch.offsets[slot]));
                let w2 = step.rotate(&(lin.x + shift));
                let w3 = &scratch.rot_mean_diff;
                let n = self.n_extra as f64;
                let mut log_h = 0.0;
                for d in 0..w1.len() {
                    log_h += 0.5 * scratch.m1[d] * w1[d] * w1[d]
                        - 0.5 * n * scratch.m2[d] * w2[d] * w2[d]
                        - (n + 1.0) * scratch.g[d] * w3[d] * (w1[d] - w2[d])
                        - scratch.g[d] * w1[d] * w2[d];
                }
                model.log_q(t, lin.x_prev, lin.x) + log_h
            }
        }
    }

    fn log_q_factor(&self, t: usize, lin: &LineageView) -> f64 {
        match self.strategy.flavor {
            GainFlavor::Marginal => {
                self.strategy.model.log_q(t, lin.x_prev, lin.x)
            }
            GainFlavor::Aux => self.aux_numerator(t, lin),
            GainFlavor::AuxSmoothing => {
                let mut lq = self.aux_numerator(t, lin);
                if t > 0 {
                    lq += self.smoothing_ratio(t, lin);
                }
                lq
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_lgssm, make_stochvol, Lgssm, StochVol};
    use crate::oracle::{exact_marginal_proposal_logpdf, MarginalProposalSpec};
    use rand::SeedableRng;

    fn lgssm(seed: u64) -> Arc<Lgssm> {
        let mut rng = Prng::seed_from_u64(seed);
        let (_, obs) = Lgssm::simulate(2, 3, 0.8, &mut rng);
        Arc::new(make_lgssm(2, 3, 0.8, obs).unwrap())
    }

    fn stochvol(seed: u64) -> Arc<StochVol> {
        let mut rng = Prng::seed_from_u64(seed);
        let (_, obs) = StochVol::simulate(2, 3, 0.9, 0.25, 1.0, &mut rng).unwrap();
        Arc::new(make_stochvol(2, 3, 0.9, 0.25, 1.0, obs).unwrap())
    }

    #[test]
    fn conditional_moments_match_conjugate_oracle() {
        // M'(x | xp; u) ∝ N(x; m, C) N(u; x, δ/2 I): compare mean/cov and
        // the log-density against a dense Bayes update.
        let model = stochvol(10);
        let strategy = GainStrategy::new(model.clone(), model.clone(), GainFlavor::Aux).unwrap();
        let mut rng = Prng::seed_from_u64(11);
        let delta = 0.6;
        for t in [0usize, 1, 2] {
            let xp = gauss::std_normal_vector(2, &mut rng);
            let ancestor = (t > 0).then_some(&xp);
            let u = gauss::std_normal_vector(2, &mut rng);
            let x = gauss::std_normal_vector(2, &mut rng);

            let cov = SpdMatrix::new(GaussianDynamics::cov(model.as_ref(), t, ancestor)).unwrap();
            let prior_mean = GaussianDynamics::mean(model.as_ref(), t, ancestor);
            let prec_prior = cov.inverse();
            let prec_obs = DMatrix::from_diagonal_element(2, 2, 2.0 / delta);
            let post_cov = (prec_prior.clone() + prec_obs.clone()).try_inverse().unwrap();
            let post_mean = &post_cov * (&prec_prior * &prior_mean + &prec_obs * &u);

            let cache = SpectralCache::new(&cov);
            let step = GainStep::from_cache(&cache, delta);
            let mean = step.cond_mean(&prior_mean, &u);
            assert!((&mean - &post_mean).norm() < 1e-9, "mean at t={t}");

            let dense =
                crate::oracle::DenseGaussian { mean: post_mean, cov: post_cov.clone() };
            assert!((step.logpdf(&x, &mean) - dense.logpdf(&x).unwrap()).abs() < 1e-9);
            let _ = strategy.name();
        }
    }

    #[test]
    fn marginal_weight_matches_dense_gaussian_oracle() {
        // exp(log H) must equal q_{-n}(x_{-n} | x_n) up to a slot-independent
        // constant, i.e. log_weight - log Q - log q_{-n} constant over n.
        let model = lgssm(12);
        let strategy =
            GainStrategy::new(model.clone(), model.clone(), GainFlavor::Marginal).unwrap();
        let mut rng = Prng::seed_from_u64(13);
        let t = 1usize;
        let delta = 0.9;
        let slots = 4; // N = 3
        let config = SweepConfig::new(slots - 1, vec![delta; 3]);

        for _ in 0..20 {
            let reference = Trajectory::new(
                (0..3).map(|_| gauss::std_normal_vector(2, &mut rng)).collect(),
            )
            .unwrap();
            let aux = strategy.sample_aux(&reference, &config, &mut rng).unwrap().unwrap();
            let mut ctx = strategy.begin_sweep(&reference, Some(&aux), &config).unwrap();

            let prev: Vec<DVector<f64>> =
                (0..slots).map(|_| gauss::std_normal_vector(2, &mut rng)).collect();
            let particles: Vec<DVector<f64>> =
                (0..slots).map(|_| gauss::std_normal_vector(2, &mut rng)).collect();
            let ancestors: Vec<usize> = (0..slots).collect();
            ctx.prepare_step(t, &particles, &prev, &ancestors);

            // Dense oracle pieces.
            let cov = SpdMatrix::new(GaussianDynamics::cov(model.as_ref(), t, None)).unwrap();
            let gain = gauss::gain_matrix(&cov, delta, None);
            let cond_cov = gain.clone() * (0.5 * delta);
            let eye = DMatrix::identity(2, 2);
            let decomp = model.decomposition().unwrap();
            let spec = MarginalProposalSpec {
                offsets: (0..slots)
                    .map(|n| {
                        (&eye - &gain)
                            * GaussianDynamics::mean(model.as_ref(), t, Some(&prev[n]))
                    })
                    .collect(),
                factors: vec![gain.clone(); slots],
                cond_covs: vec![cond_cov.clone(); slots],
                aux_cov: DMatrix::from_diagonal_element(2, 2, 0.5 * delta),
                shifts: (0..slots)
                    .map(|n| {
                        decomp.grad_log_g_x(t, Some(&prev[n]), &particles[n]) * (0.5 * delta)
                    })
                    .collect(),
            };

            let mut residuals = Vec::new();
            for n in 0..slots {
                let lin =
                    LineageView { x: &particles[n], x_prev: Some(&prev[n]), x_prev2: None };
                let log_h = ctx.log_weight(t, n, &lin)
                    - crate::model::FeynmanKac::log_q(
                        model.as_ref(),
                        t,
                        Some(&prev[n]),
                        &particles[n],
                    );
                let log_dense = exact_marginal_proposal_logpdf(&spec, n, &particles).unwrap();
                residuals.push(log_dense - log_h);
            }
            let mean: f64 = residuals.iter().sum::<f64>() / residuals.len() as f64;
            for r in &residuals {
                assert!(
                    (r - mean).abs() < 1e-8,
                    "H-factor does not match the dense marginal law: {residuals:?}"
                );
            }
        }
    }

    #[test]
    fn smoothing_flavour_coincides_with_aux_when_potential_is_markov() {
        // On the stochastic-volatility model the potential ignores x_prev,
        // so the smoothing correction vanishes identically.
        let model = stochvol(14);
        let aux_s = GainStrategy::new(model.clone(), model.clone(), GainFlavor::Aux).unwrap();
        let plus = GainStrategy::new(model.clone(), model.clone(), GainFlavor::AuxSmoothing)
            .unwrap();
        let config = SweepConfig::new(2, vec![0.5; 3]);
        let mut rng = Prng::seed_from_u64(15);
        let reference = Trajectory::new(
            (0..3).map(|_| gauss::std_normal_vector(2, &mut rng)).collect(),
        )
        .unwrap();

        let mut r1 = Prng::seed_from_u64(16);
        let mut r2 = Prng::seed_from_u64(16);
        let aux1 = aux_s.sample_aux(&reference, &config, &mut r1).unwrap().unwrap();
        let aux2 = plus.sample_aux(&reference, &config, &mut r2).unwrap().unwrap();
        assert_eq!(aux1, aux2);

        let c1 = aux_s.begin_sweep(&reference, Some(&aux1), &config).unwrap();
        let c2 = plus.begin_sweep(&reference, Some(&aux2), &config).unwrap();
        let x = gauss::std_normal_vector(2, &mut rng);
        let xp = gauss::std_normal_vector(2, &mut rng);
        let xpp = gauss::std_normal_vector(2, &mut rng);
        let lin1 = LineageView { x: &x, x_prev: Some(&xp), x_prev2: None };
        let lin2 = LineageView { x: &x, x_prev: Some(&xp), x_prev2: Some(&xpp) };
        assert_eq!(c1.log_weight(2, 0, &lin1), c2.log_weight(2, 0, &lin2));
        assert_eq!(c1.log_q_factor(2, &lin1), c2.log_q_factor(2, &lin2));
    }

    #[test]
    fn marginal_moments_interpolate_between_prior_and_langevin() {
        // Small prior variance: slot moments approach (m, C). Large prior
        // variance: they approach the Langevin moments (x + φ_π, δ I).
        let delta = 0.8;
        let mut rng = Prng::seed_from_u64(17);
        let y: Vec<DVector<f64>> = (0..1).map(|_| gauss::std_normal_vector(2, &mut rng)).collect();
        let reference = gauss::std_normal_vector(2, &mut rng);

        for (lambda, tol) in [(1e-6, 1e-4), (1e6, 1e-4)] {
            let model = Arc::new(make_lgssm(2, 1, lambda, y.clone()).unwrap());
            let strategy =
                GainStrategy::new(model.clone(), model.clone(), GainFlavor::Marginal).unwrap();
            let (mean, cov) = strategy
                .slot_marginal_moments(0, None, None, &reference, delta, 1.0)
                .unwrap();
            if lambda < 1.0 {
                let prior_mean = GaussianDynamics::mean(model.as_ref(), 0, None);
                let prior_cov = GaussianDynamics::cov(model.as_ref(), 0, None);
                // Means live on the O(1) state scale; covariances are
                // compared relative to their own norm.
                assert!((mean - prior_mean).norm() < tol);
                assert!((&cov - &prior_cov).norm() / prior_cov.norm() < tol);
            } else {
                let grad = crate::model::grad_filter(model.as_ref(), 0, None, &reference);
                let langevin_mean = &reference + grad * (0.5 * delta);
                let langevin_cov = DMatrix::from_diagonal_element(2, 2, delta);
                assert!((mean - langevin_mean).norm() < tol);
                assert!((&cov - &langevin_cov).norm() / langevin_cov.norm() < tol);
            }
        }
    }
}
