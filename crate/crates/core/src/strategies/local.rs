//! Isotropic local proposals around the reference path: the random-walk,
//! filter-gradient and smoothing-gradient Langevin families.
//!
//! All four flavours share the same two-stage mechanism: an auxiliary
//! variable `u_t ~ N(x_t + shift_t, (δ_t/2) I)` centred on the (possibly
//! gradient-shifted) reference, and proposals `x_t^n ~ N(u_t, (δ_t/2) I)`,
//! so that each proposal is marginally `N(x_t + shift_t, δ_t I)`. They
//! differ in the weights:
//!
//! * `RandomWalk`: plain `Q_t`, no gradient anywhere;
//! * `AuxFilter`: `Q_t` times the auxiliary density ratio with the
//!   filter gradient of each particle's own lineage;
//! * `Marginal`: the auxiliary variable integrated out of the weights,
//!   leaving the O(N) mean-field factor in `x̄_t`;
//! * `AuxSmoothing`: as `AuxFilter` but drifting along the smoothing
//!   gradient, which makes the weights second-order Markov.

use std::sync::Arc;

use nalgebra::DVector;

use super::{gradient_shift, iso_shift_log_ratio};
use crate::csmc::{KernelStrategy, LineageView, MarkovOrder, SweepConfig, SweepCtx};
use crate::error::Result;
use crate::gauss;
use crate::model::{grad_filter, grad_smoothing, FeynmanKac, Trajectory};
use crate::Prng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalFlavor {
    RandomWalk,
    AuxFilter,
    Marginal,
    AuxSmoothing,
}

pub struct LocalStrategy {
    model: Arc<dyn FeynmanKac>,
    flavor: LocalFlavor,
}

impl LocalStrategy {
    pub fn new(model: Arc<dyn FeynmanKac>, flavor: LocalFlavor) -> Self {
        Self { model, flavor }
    }

    fn reference_shift(
        &self,
        t: usize,
        reference: &Trajectory,
        config: &SweepConfig,
    ) -> DVector<f64> {
        let model = self.model.as_ref();
        let x_prev = (t > 0).then(|| reference.state(t - 1));
        let x = reference.state(t);
        match self.flavor {
            LocalFlavor::RandomWalk => DVector::zeros(model.dim()),
            LocalFlavor::AuxFilter | LocalFlavor::Marginal => {
                gradient_shift(config.kappa, config.deltas[t], model.dim(), || {
                    grad_filter(model, t, x_prev, x)
                })
            }
            LocalFlavor::AuxSmoothing => {
                let x_next = (t + 1 < model.horizon()).then(|| reference.state(t + 1));
                gradient_shift(config.kappa, config.deltas[t], model.dim(), || {
                    grad_smoothing(model, t, x_prev, x, x_next)
                })
            }
        }
    }
}

impl KernelStrategy for LocalStrategy {
    fn name(&self) -> &str {
        match self.flavor {
            LocalFlavor::RandomWalk => {
                if self.model.horizon() == 1 {
                    "rwm1"
                } else {
                    "p-rwm"
                }
            }
            LocalFlavor::AuxFilter => {
                if self.model.horizon() == 1 {
                    "amala1"
                } else {
                    "p-amala"
                }
            }
            LocalFlavor::Marginal => {
                if self.model.horizon() == 1 {
                    "mala1"
                } else {
                    "p-mala"
                }
            }
            LocalFlavor::AuxSmoothing => "p-amala+",
        }
    }

    fn markov_order(&self) -> MarkovOrder {
        match self.flavor {
            LocalFlavor::AuxSmoothing => MarkovOrder::Second,
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
        let mut aux = Vec::with_capacity(reference.len());
        for t in 0..reference.len() {
            let mean = reference.state(t) + self.reference_shift(t, reference, config);
            let sd = (0.5 * config.deltas[t]).sqrt();
            aux.push(mean + gauss::std_normal_vector(self.model.dim(), rng) * sd);
        }
        Ok(Some(aux))
    }

    fn begin_sweep<'a>(
        &'a self,
        _reference: &'a Trajectory,
        aux: Option<&'a [DVector<f64>]>,
        config: &SweepConfig,
    ) -> Result<Box<dyn SweepCtx + 'a>> {
        Ok(Box::new(LocalCtx {
            strategy: self,
            aux: aux.expect("local strategies always sample auxiliary variables"),
            deltas: config.deltas.clone(),
            kappa: config.kappa,
            n_extra: config.n_extra,
            particle_mean: None,
        }))
    }
}

struct LocalCtx<'a> {
    strategy: &'a LocalStrategy,
    aux: &'a [DVector<f64>],
    deltas: Vec<f64>,
    kappa: f64,
    n_extra: usize,
    /// `x̄_t` for the marginal flavour, refreshed each step.
    particle_mean: Option<DVector<f64>>,
}

impl LocalCtx<'_> {
    fn model(&self) -> &dyn FeynmanKac {
        self.strategy.model.as_ref()
    }

    /// `κ (δ_t/2) ∇ log Q_t` on a particle lineage.
    fn filter_shift(&self, t: usize, lin: &LineageView) -> DVector<f64> {
        let model = self.model();
        gradient_shift(self.kappa, self.deltas[t], model.dim(), || {
            grad_filter(model, t, lin.x_prev, lin.x)
        })
    }

    /// Second-order correction: the auxiliary density ratio at `t-1` with
    /// the smoothing gradient in the numerator and the filter gradient in
    /// the denominator, both evaluated on the candidate lineage.
    fn smoothing_ratio(&self, t: usize, lin: &LineageView) -> f64 {
        debug_assert!(t > 0);
        let model = self.model();
        let prev = lin.x_prev.expect("second-order weights need the previous state");
        if self.kappa == 0.0 {
            return 0.0;
        }
        // The smoothing gradient extends the filter gradient by one term;
        // evaluate the shared part once.
        let scale = self.kappa * 0.5 * self.deltas[t - 1];
        let filter = grad_filter(model, t - 1, lin.x_prev2, prev) * scale;
        let smooth = &filter + model.grad_log_q_xprev(t, prev, lin.x) * scale;
        let var = 0.5 * self.deltas[t - 1];
        let u = &self.aux[t - 1];
        iso_shift_log_ratio(u, prev, &smooth, var) - iso_shift_log_ratio(u, prev, &filter, var)
    }
}

impl SweepCtx for LocalCtx<'_> {
    fn propose(&self, t: usize, _ancestor: Option<&DVector<f64>>, rng: &mut Prng) -> DVector<f64> {
        let sd = (0.5 * self.deltas[t]).sqrt();
        &self.aux[t] + gauss::std_normal_vector(self.model().dim(), rng) * sd
    }

    fn prepare_step(
        &mut self,
        _t: usize,
        particles: &[DVector<f64>],
        _prev_particles: &[DVector<f64>],
        _ancestors: &[usize],
    ) {
        if self.strategy.flavor == LocalFlavor::Marginal {
            let mut mean = DVector::zeros(particles[0].len());
            for p in particles {
                mean += p;
            }
            mean /= particles.len() as f64;
            self.particle_mean = Some(mean);
        }
    }

    fn log_weight(&self, t: usize, _slot: usize, lin: &LineageView) -> f64 {
        let model = self.model();
        let log_q = model.log_q(t, lin.x_prev, lin.x);
        match self.strategy.flavor {
            LocalFlavor::RandomWalk => log_q,
            LocalFlavor::AuxFilter => {
                let shift = self.filter_shift(t, lin);
                log_q + iso_shift_log_ratio(&self.aux[t], lin.x, &shift, 0.5 * self.deltas[t])
            }
            LocalFlavor::Marginal => {
                // Mean-field factor with the auxiliary variable integrated
                // out: (1/δ)[2 φᵀ(x̄ - x) - N/(N+1) φᵀφ].
                let shift = self.filter_shift(t, lin);
                let mean = self.particle_mean.as_ref().expect("prepare_step ran");
                let mut dot = 0.0;
                let mut norm_sq = 0.0;
                for i in 0..shift.len() {
                    dot += shift[i] * (mean[i] - lin.x[i]);
                    norm_sq += shift[i] * shift[i];
                }
                let n = self.n_extra as f64;
                log_q + (2.0 * dot - n / (n + 1.0) * norm_sq) / self.deltas[t]
            }
            LocalFlavor::AuxSmoothing => {
                let shift = self.filter_shift(t, lin);
                let mut lw = log_q
                    + iso_shift_log_ratio(&self.aux[t], lin.x, &shift, 0.5 * self.deltas[t]);
                if t > 0 {
                    lw += self.smoothing_ratio(t, lin);
                }
                lw
            }
        }
    }

    fn log_q_factor(&self, t: usize, lin: &LineageView) -> f64 {
        let model = self.model();
        match self.strategy.flavor {
            // Marginal algorithms keep the plain model factor in the
            // backward kernel.
            LocalFlavor::Marginal => model.log_q(t, lin.x_prev, lin.x),
            // For the auxiliary algorithms the mutation density cancels
            // against the potential's denominator:
            // Q'_t = Q_t · N(u_t; x_t + φ_t, (δ_t/2) I),
            // with no gradient shift at all in the random-walk flavour.
            LocalFlavor::RandomWalk => {
                model.log_q(t, lin.x_prev, lin.x)
                    + gauss::iso_logpdf(&self.aux[t], lin.x, 0.5 * self.deltas[t])
            }
            LocalFlavor::AuxFilter => {
                let shift = self.filter_shift(t, lin);
                model.log_q(t, lin.x_prev, lin.x)
                    + gauss::iso_logpdf(&self.aux[t], &(lin.x + shift), 0.5 * self.deltas[t])
            }
            LocalFlavor::AuxSmoothing => {
                let shift = self.filter_shift(t, lin);
                let mut lq = model.log_q(t, lin.x_prev, lin.x)
                    + gauss::iso_logpdf(&self.aux[t], &(lin.x + shift), 0.5 * self.deltas[t]);
                if t > 0 {
                    lq += self.smoothing_ratio(t, lin);
                }
                lq
            }
        }
    }
}
