//! Kalman-twisted proposals: each particle is proposed from the conditional
//! law of the affine-Gaussian prior given *all* future auxiliary variables,
//! `M'_t(x | x_prev; u_{t..T-1}) = N(F'_t x_prev + b'_t, Σ'_t)`, whose
//! parameters are refreshed once per sweep by the recursions in
//! [`crate::twist`].
//!
//! The pseudo-observation noise is `(δ_t/2) I` for the gradient-twisted
//! variant and `(δ_t/2) C_t` for the preconditioned variant; the `plus`
//! flag swaps the filter-potential gradient for the smoothing-potential
//! gradient, making the weights second-order Markov.

use std::sync::Arc;

use nalgebra::DVector;

use super::pcnl::PcnlPrecond;
use super::iso_shift_log_ratio;
use crate::csmc::{KernelStrategy, LineageView, MarkovOrder, SweepConfig, SweepCtx};
use crate::error::{Error, Result};
use crate::gauss::{self, SpdMatrix};
use crate::model::{grad_potential_smoothing, FeynmanKac, GaussianDynamics, Trajectory};
use crate::twist::{twisted_params_general, ObsCovKind, TwistedParams};
use crate::Prng;

pub struct TwistedStrategy {
    model: Arc<dyn FeynmanKac>,
    dynamics: Arc<dyn GaussianDynamics>,
    kind: ObsCovKind,
    smoothing: bool,
    precond: PcnlPrecond,
    /// Factorised `C_t`, used by the preconditioned variant.
    covs: Vec<SpdMatrix>,
}

impl TwistedStrategy {
    pub fn new(
        model: Arc<dyn FeynmanKac>,
        dynamics: Arc<dyn GaussianDynamics>,
        kind: ObsCovKind,
        smoothing: bool,
    ) -> Result<Self> {
        if model.decomposition().is_none() {
            return Err(Error::config("twisted strategies require a potential decomposition"));
        }
        if !dynamics.is_affine() || !dynamics.constant_cov() {
            return Err(Error::config(
                "twisted strategies require affine dynamics with constant covariances",
            ));
        }
        let covs = (0..dynamics.horizon())
            .map(|t| SpdMatrix::new(dynamics.cov(t, None)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { model, dynamics, kind, smoothing, precond: PcnlPrecond::PriorStep, covs })
    }

    /// Gradient shift entering the auxiliary mean: preconditioned by `C_t`
    /// for the PCN-style variant, identity otherwise.
    fn potential_shift(
        &self,
        t: usize,
        kappa: f64,
        delta: f64,
        x_prev: Option<&DVector<f64>>,
        x: &DVector<f64>,
        x_next: Option<&DVector<f64>>,
    ) -> DVector<f64> {
        let dim = self.model.dim();
        if kappa == 0.0 {
            return DVector::zeros(dim);
        }
        let decomp = self.model.decomposition().expect("checked at construction");
        let grad = if self.smoothing {
            grad_potential_smoothing(self.model.as_ref(), t, x_prev, x, x_next)
                .expect("decomposition checked at construction")
        } else {
            decomp.grad_log_g_x(t, x_prev, x)
        };
        let preconditioned = match self.kind {
            ObsCovKind::Identity => grad,
            ObsCovKind::PriorCov => match &self.precond {
                PcnlPrecond::PriorStep => self.covs[t].dense() * grad,
                PcnlPrecond::Truncated(_) => unreachable!("twisted uses the per-step prior"),
            },
        };
        preconditioned * (kappa * 0.5 * delta)
    }

    /// The filter-potential shift used in weights (per particle lineage).
    fn filter_shift(&self, t: usize, kappa: f64, delta: f64, lin: &LineageView) -> DVector<f64> {
        let dim = self.model.dim();
        if kappa == 0.0 {
            return DVector::zeros(dim);
        }
        let decomp = self.model.decomposition().expect("checked");
        let grad = decomp.grad_log_g_x(t, lin.x_prev, lin.x);
        let preconditioned = match self.kind {
            ObsCovKind::Identity => grad,
            ObsCovKind::PriorCov => self.covs[t].dense() * grad,
        };
        preconditioned * (kappa * 0.5 * delta)
    }
}

impl KernelStrategy for TwistedStrategy {
    fn name(&self) -> &str {
        match (self.kind, self.smoothing) {
            (ObsCovKind::Identity, false) => "tp-agrad",
            (ObsCovKind::Identity, true) => "tp-agrad+",
            (ObsCovKind::PriorCov, false) => "tp-apcnl",
            (ObsCovKind::PriorCov, true) => "tp-apcnl+",
        }
    }

    fn markov_order(&self) -> MarkovOrder {
        if self.smoothing {
            MarkovOrder::Second
        } else {
            MarkovOrder::First
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
            let mean = reference.state(t) + shift;
            let half = 0.5 * config.deltas[t];
            let draw = match self.kind {
                ObsCovKind::Identity => {
                    mean + gauss::std_normal_vector(self.model.dim(), rng) * half.sqrt()
                }
                ObsCovKind::PriorCov => {
                    gauss::scaled_mvn_sample(&mean, &self.covs[t], half, rng)
                }
            };
            aux.push(draw);
        }
        Ok(Some(aux))
    }

    fn begin_sweep<'a>(
        &'a self,
        _reference: &'a Trajectory,
        aux: Option<&'a [DVector<f64>]>,
        config: &SweepConfig,
    ) -> Result<Box<dyn SweepCtx + 'a>> {
        let aux = aux.expect("twisted strategies always sample auxiliary variables");
        let params =
            twisted_params_general(self.dynamics.as_ref(), &config.deltas, aux, self.kind)?;
        Ok(Box::new(TwistedCtx {
            strategy: self,
            aux,
            params,
            deltas: config.deltas.clone(),
            kappa: config.kappa,
        }))
    }
}

struct TwistedCtx<'a> {
    strategy: &'a TwistedStrategy,
    aux: &'a [DVector<f64>],
    params: TwistedParams,
    deltas: Vec<f64>,
    kappa: f64,
}

impl TwistedCtx<'_> {
    /// `log N(u_t; x + φ, E_t)` for the flavour's observation covariance.
    fn aux_logpdf(&self, t: usize, x: &DVector<f64>, shift: &DVector<f64>) -> f64 {
        let mean = x + shift;
        let half = 0.5 * self.deltas[t];
        match self.strategy.kind {
            ObsCovKind::Identity => gauss::iso_logpdf(&self.aux[t], &mean, half),
            ObsCovKind::PriorCov => {
                gauss::scaled_mvn_logpdf(&self.aux[t], &mean, &self.strategy.covs[t], half)
            }
        }
    }

    fn aux_numerator(&self, t: usize, lin: &LineageView) -> f64 {
        let shift = self.strategy.filter_shift(t, self.kappa, self.deltas[t], lin);
        self.strategy.model.log_q(t, lin.x_prev, lin.x) + self.aux_logpdf(t, lin.x, &shift)
    }

    /// Smoothing-vs-filter auxiliary ratio at `t-1`.
    fn smoothing_ratio(&self, t: usize, lin: &LineageView) -> f64 {
        debug_assert!(t > 0);
        let strategy = self.strategy;
        let model = strategy.model.as_ref();
        let decomp = model.decomposition().expect("checked");
        let prev = lin.x_prev.expect("second-order weights need the previous state");
        if self.kappa == 0.0 {
            return 0.0;
        }
        let delta_prev = self.deltas[t - 1];
        let apply = |grad: DVector<f64>| -> DVector<f64> {
            let preconditioned = match strategy.kind {
                ObsCovKind::Identity => grad,
                ObsCovKind::PriorCov => strategy.covs[t - 1].dense() * grad,
            };
            preconditioned * (self.kappa * 0.5 * delta_prev)
        };
        let filter_grad = decomp.grad_log_g_x(t - 1, lin.x_prev2, prev);
        let smooth = apply(&filter_grad + decomp.grad_log_g_xprev(t, prev, lin.x));
        let filter = apply(filter_grad);
        let half = 0.5 * delta_prev;
        match strategy.kind {
            ObsCovKind::Identity => {
                iso_shift_log_ratio(&self.aux[t - 1], prev, &smooth, half)
                    - iso_shift_log_ratio(&self.aux[t - 1], prev, &filter, half)
            }
            ObsCovKind::PriorCov => {
                let cov = &strategy.covs[t - 1];
                let r_smooth = &self.aux[t - 1] - prev - &smooth;
                let r_filter = &self.aux[t - 1] - prev - &filter;
                (cov.inv_quad(&r_filter) - cov.inv_quad(&r_smooth)) / (2.0 * half)
            }
        }
    }
}

impl SweepCtx for TwistedCtx<'_> {
    fn propose(&self, t: usize, ancestor: Option<&DVector<f64>>, rng: &mut Prng) -> DVector<f64> {
        self.params.sample(t, ancestor, rng)
    }

    fn log_weight(&self, t: usize, _slot: usize, lin: &LineageView) -> f64 {
        let mut lw = self.aux_numerator(t, lin) - self.params.logpdf(t, lin.x_prev, lin.x);
        if self.strategy.smoothing && t > 0 {
            lw += self.smoothing_ratio(t, lin);
        }
        lw
    }

    fn log_q_factor(&self, t: usize, lin: &LineageView) -> f64 {
        let mut lq = self.aux_numerator(t, lin);
        if self.strategy.smoothing && t > 0 {
            lq += self.smoothing_ratio(t, lin);
        }
        lq
    }
}
