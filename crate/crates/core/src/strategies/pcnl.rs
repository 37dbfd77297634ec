//! Prior-preconditioned Crank–Nicolson proposals with optional Langevin
//! drift.
//!
//! With `β_t = 2/(2 + δ_t)`, the auxiliary variable is
//! `u_t ~ N(x_t + φ_t, (δ_t/2) C_t(x_{t-1}))` for the preconditioned drift
//! `φ_t = κ (δ_t/2) Σ̃_t(x_{t-1}) ∇ log G_t`, and each particle is proposed
//! from the prior/pseudo-observation conditional
//! `N(β_t u_t + (1-β_t) m_t(x_{t-1}), (1-β_t) C_t(x_{t-1}))`, so the
//! single-proposal marginal is `N(x_t + φ_t, (1-β_t²) C_t)`.
//!
//! The preconditioner is selectable: the per-step prior covariance (no
//! extra assumptions), or a banded sum of path-covariance blocks around the
//! diagonal (requires affine dynamics, stays linear in T).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::csmc::{KernelStrategy, LineageView, MarkovOrder, SweepConfig, SweepCtx};
use crate::error::{Error, Result};
use crate::gauss::{self, SpdMatrix};
use crate::model::{grad_potential_smoothing, FeynmanKac, GaussianDynamics, Trajectory};
use crate::twist::prior_marginals;
use crate::Prng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcnlFlavor {
    Aux,
    Marginal,
    AuxSmoothing,
}

/// Preconditioner `Σ̃_t` applied to the potential gradient.
#[derive(Debug, Clone, PartialEq)]
pub enum PcnlPrecond {
    /// `Σ̃_t(x_{t-1}) = C_t(x_{t-1})`.
    PriorStep,
    /// `Σ̃_t = Σ_{s=(t-L)∨0}^{(t+L)∧(T-1)} Σ_{s,t}` over path-covariance
    /// blocks, truncated to a window of half-width `L`.
    Truncated(usize),
}

pub struct PcnlStrategy {
    model: Arc<dyn FeynmanKac>,
    dynamics: Arc<dyn GaussianDynamics>,
    flavor: PcnlFlavor,
    precond: PcnlPrecond,
    /// Cached factorisations of the per-step covariances (constant case).
    const_covs: Option<Vec<SpdMatrix>>,
    /// Banded-sum preconditioners, when selected.
    trunc: Option<Vec<DMatrix<f64>>>,
}

impl PcnlStrategy {
    pub fn new(
        model: Arc<dyn FeynmanKac>,
        dynamics: Arc<dyn GaussianDynamics>,
        flavor: PcnlFlavor,
        precond: PcnlPrecond,
    ) -> Result<Self> {
        if model.decomposition().is_none() {
            return Err(Error::config("PCN strategies require a potential decomposition"));
        }
        if flavor == PcnlFlavor::Marginal && !dynamics.constant_cov() {
            return Err(Error::config(
                "the marginal PCN strategy requires constant covariances C_t(x) = C_t",
            ));
        }
        let const_covs = if dynamics.constant_cov() {
            Some(
                (0..dynamics.horizon())
                    .map(|t| SpdMatrix::new(dynamics.cov(t, None)))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        let trunc = match &precond {
            PcnlPrecond::PriorStep => None,
            PcnlPrecond::Truncated(window) => {
                Some(truncated_preconditioners(dynamics.as_ref(), *window)?)
            }
        };
        Ok(Self { model, dynamics, flavor, precond, const_covs, trunc })
    }

    fn step_cov(&self, t: usize, x_prev: Option<&DVector<f64>>) -> Result<StepCov<'_>> {
        match &self.const_covs {
            Some(covs) => Ok(StepCov::Borrowed(&covs[t])),
            None => Ok(StepCov::Owned(SpdMatrix::new(self.dynamics.cov(t, x_prev))?)),
        }
    }

    /// `κ (δ/2) Σ̃_t ∇ log G` for the chosen flavour and preconditioner.
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
        let grad = match self.flavor {
            PcnlFlavor::Aux | PcnlFlavor::Marginal => decomp.grad_log_g_x(t, x_prev, x),
            PcnlFlavor::AuxSmoothing => {
                grad_potential_smoothing(self.model.as_ref(), t, x_prev, x, x_next)
                    .expect("decomposition checked at construction")
            }
        };
        let preconditioned = match (&self.precond, &self.trunc) {
            (PcnlPrecond::PriorStep, _) => self.dynamics.cov(t, x_prev) * grad,
            (PcnlPrecond::Truncated(_), Some(mats)) => &mats[t] * grad,
            (PcnlPrecond::Truncated(_), None) => unreachable!("built in the constructor"),
        };
        preconditioned * (kappa * 0.5 * delta)
    }
}

enum StepCov<'a> {
    Borrowed(&'a SpdMatrix),
    Owned(SpdMatrix),
}

impl std::ops::Deref for StepCov<'_> {
    type Target = SpdMatrix;
    fn deref(&self) -> &SpdMatrix {
        match self {
            StepCov::Borrowed(c) => c,
            StepCov::Owned(c) => c,
        }
    }
}

/// `Σ̃_t = Σ_t + Σ_{s>t, s<=t+L} Σ_{s,t} + Σ_{s<t, s>=t-L} Σ_{t,s}ᵀ`, built
/// from the band recursion `Σ_{s,t} = F_s Σ_{s-1,t}`.
fn truncated_preconditioners(
    dynamics: &dyn GaussianDynamics,
    window: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let horizon = dynamics.horizon();
    let (_, diag) = prior_marginals(dynamics)?;
    // lower[t][j] = Σ_{t, t-j} for j = 1..=window.
    let mut lower: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mut row = Vec::new();
        if t > 0 {
            let (f, _) = dynamics
                .affine_coeffs(t)
                .ok_or_else(|| Error::config("truncated preconditioner requires affine dynamics"))?;
            for j in 1..=window.min(t) {
                let below = if j == 1 { &diag[t - 1] } else { &lower[t - 1][j - 2] };
                row.push(&f * below);
            }
        }
        lower.push(row);
    }
    let mut out = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mut total = diag[t].clone();
        for j in 1..=window {
            if t + j < horizon {
                total += &lower[t + j][j - 1];
            }
            if j <= t {
                total += lower[t][j - 1].transpose();
            }
        }
        out.push(total);
    }
    Ok(out)
}

impl KernelStrategy for PcnlStrategy {
    fn name(&self) -> &str {
        match self.flavor {
            PcnlFlavor::Aux => "p-apcnl",
            PcnlFlavor::Marginal => "p-pcnl",
            PcnlFlavor::AuxSmoothing => "p-apcnl+",
        }
    }

    fn markov_order(&self) -> MarkovOrder {
        match self.flavor {
            PcnlFlavor::AuxSmoothing => MarkovOrder::Second,
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
            let cov = self.step_cov(t, x_prev)?;
            let mean = reference.state(t) + shift;
            aux.push(gauss::scaled_mvn_sample(&mean, &cov, 0.5 * config.deltas[t], rng));
        }
        Ok(Some(aux))
    }

    fn begin_sweep<'a>(
        &'a self,
        _reference: &'a Trajectory,
        aux: Option<&'a [DVector<f64>]>,
        config: &SweepConfig,
    ) -> Result<Box<dyn SweepCtx + 'a>> {
        let betas: Vec<f64> = config.deltas.iter().map(|d| 2.0 / (2.0 + d)).collect();
        Ok(Box::new(PcnlCtx {
            strategy: self,
            aux: aux.expect("PCN strategies always sample auxiliary variables"),
            deltas: config.deltas.clone(),
            betas,
            kappa: config.kappa,
            n_extra: config.n_extra,
            marginal: None,
        }))
    }
}

/// Per-step aggregates for the marginal PCN weight factor.
struct PcnlScratch {
    t: usize,
    /// `v^n = (1-β) m_t(ancestor of n)`.
    offsets: Vec<DVector<f64>>,
    /// `C^{-1}(x̄ - v̄)`.
    solved_mean_diff: DVector<f64>,
}

struct PcnlCtx<'a> {
    strategy: &'a PcnlStrategy,
    aux: &'a [DVector<f64>],
    deltas: Vec<f64>,
    betas: Vec<f64>,
    kappa: f64,
    n_extra: usize,
    marginal: Option<PcnlScratch>,
}

impl PcnlCtx<'_> {
    fn shift(&self, t: usize, lin: &LineageView) -> DVector<f64> {
        // Weight shifts always use the filter-potential gradient; the
        // smoothing gradient only enters through the t-1 correction ratio.
        let decomp = self.strategy.model.decomposition().expect("checked");
        let dim = self.strategy.model.dim();
        if self.kappa == 0.0 {
            return DVector::zeros(dim);
        }
        let grad = decomp.grad_log_g_x(t, lin.x_prev, lin.x);
        let preconditioned = match (&self.strategy.precond, &self.strategy.trunc) {
            (PcnlPrecond::PriorStep, _) => self.strategy.dynamics.cov(t, lin.x_prev) * grad,
            (PcnlPrecond::Truncated(_), Some(mats)) => &mats[t] * grad,
            (PcnlPrecond::Truncated(_), None) => unreachable!(),
        };
        preconditioned * (self.kappa * 0.5 * self.deltas[t])
    }

    /// Auxiliary density ratio at `t-1` with smoothing- vs filter-potential
    /// gradients, both preconditioned, under covariance `(δ/2) C_{t-1}`.
    fn smoothing_ratio(&self, t: usize, lin: &LineageView) -> Result<f64> {
        debug_assert!(t > 0);
        let model = self.strategy.model.as_ref();
        let decomp = model.decomposition().expect("checked");
        let prev = lin.x_prev.expect("second-order weights need the previous state");
        if self.kappa == 0.0 {
            return Ok(0.0);
        }
        let apply_precond = |grad: DVector<f64>| -> DVector<f64> {
            let preconditioned = match (&self.strategy.precond, &self.strategy.trunc) {
                (PcnlPrecond::PriorStep, _) => {
                    self.strategy.dynamics.cov(t - 1, lin.x_prev2) * grad
                }
                (PcnlPrecond::Truncated(_), Some(mats)) => &mats[t - 1] * grad,
                (PcnlPrecond::Truncated(_), None) => unreachable!(),
            };
            preconditioned * (self.kappa * 0.5 * self.deltas[t - 1])
        };
        let filter_grad = decomp.grad_log_g_x(t - 1, lin.x_prev2, prev);
        let smooth =
            apply_precond(&filter_grad + decomp.grad_log_g_xprev(t, prev, lin.x));
        let filter = apply_precond(filter_grad);

        // log N(u; prev + s, (δ/2)C) difference via C-weighted quadratics.
        let cov = self.strategy.step_cov(t - 1, lin.x_prev2)?;
        let scale = 0.5 * self.deltas[t - 1];
        let u = &self.aux[t - 1];
        let r_smooth = u - prev - &smooth;
        let r_filter = u - prev - &filter;
        Ok((cov.inv_quad(&r_filter) - cov.inv_quad(&r_smooth)) / (2.0 * scale))
    }

    /// `log Q_t + log N(u_t; x + φ, (δ_t/2) C_t)`: the auxiliary-weight
    /// numerator, which is also the backward-kernel factor (the proposal
    /// density cancels).
    fn aux_numerator(&self, t: usize, lin: &LineageView) -> Result<f64> {
        let model = self.strategy.model.as_ref();
        let shift = self.shift(t, lin);
        let cov = self.strategy.step_cov(t, lin.x_prev)?;
        Ok(model.log_q(t, lin.x_prev, lin.x)
            + gauss::scaled_mvn_logpdf(
                &self.aux[t],
                &(lin.x + shift),
                &cov,
                0.5 * self.deltas[t],
            ))
    }

    fn proposal_logpdf(&self, t: usize, lin: &LineageView) -> Result<f64> {
        let beta = self.betas[t];
        let prior_mean = self.strategy.dynamics.mean(t, lin.x_prev);
        let mean = &self.aux[t] * beta + prior_mean * (1.0 - beta);
        let cov = self.strategy.step_cov(t, lin.x_prev)?;
        Ok(gauss::scaled_mvn_logpdf(lin.x, &mean, &cov, 1.0 - beta))
    }
}

impl SweepCtx for PcnlCtx<'_> {
    fn propose(&self, t: usize, ancestor: Option<&DVector<f64>>, rng: &mut Prng) -> DVector<f64> {
        let beta = self.betas[t];
        let prior_mean = self.strategy.dynamics.mean(t, ancestor);
        let mean = &self.aux[t] * beta + prior_mean * (1.0 - beta);
        let cov = self.strategy.step_cov(t, ancestor).expect("proposal covariance must be SPD");
        gauss::scaled_mvn_sample(&mean, &cov, 1.0 - beta, rng)
    }

    fn prepare_step(
        &mut self,
        t: usize,
        particles: &[DVector<f64>],
        prev_particles: &[DVector<f64>],
        ancestors: &[usize],
    ) {
        if self.strategy.flavor != PcnlFlavor::Marginal {
            return;
        }
        let beta = self.betas[t];
        let slots = particles.len();
        let dim = particles[0].len();
        let mut offsets = Vec::with_capacity(slots);
        let mut offset_mean = DVector::zeros(dim);
        let mut particle_mean = DVector::zeros(dim);
        for slot in 0..slots {
            let ancestor = (t > 0).then(|| &prev_particles[ancestors[slot]]);
            let v = self.strategy.dynamics.mean(t, ancestor) * (1.0 - beta);
            offset_mean += &v;
            particle_mean += &particles[slot];
            offsets.push(v);
        }
        offset_mean /= slots as f64;
        particle_mean /= slots as f64;
        let cov = self.strategy.step_cov(t, None).expect("constant covariance");
        let solved_mean_diff = cov.solve(&(particle_mean - offset_mean));
        self.marginal = Some(PcnlScratch { t, offsets, solved_mean_diff });
    }

    fn log_weight(&self, t: usize, slot: usize, lin: &LineageView) -> f64 {
        let model = self.strategy.model.as_ref();
        match self.strategy.flavor {
            PcnlFlavor::Aux => {
                let num = self.aux_numerator(t, lin).expect("covariance must be SPD");
                num - self.proposal_logpdf(t, lin).expect("covariance must be SPD")
            }
            PcnlFlavor::AuxSmoothing => {
                let mut lw = self.aux_numerator(t, lin).expect("covariance must be SPD")
                    - self.proposal_logpdf(t, lin).expect("covariance must be SPD");
                if t > 0 {
                    lw += self.smoothing_ratio(t, lin).expect("covariance must be SPD");
                }
                lw
            }
            PcnlFlavor::Marginal => {
                // log H = (1/2)(β^{-1}+N+1)(x-v)ᵀG(x-v) - (Nβ/2)(x+φ)ᵀG(x+φ)
                //       + (N+1)(x̄-v̄)ᵀG(v+φ) - (x-v)ᵀG(x+φ),
                // with G = β/((1-β)(1+Nβ)) C^{-1}.
                let scratch = self.marginal.as_ref().expect("prepare_step ran");
                debug_assert_eq!(scratch.t, t);
                let beta = self.betas[t];
                let n = self.n_extra as f64;
                let g_scale = beta / ((1.0 - beta) * (1.0 + n * beta));
                let cov = self.strategy.step_cov(t, None).expect("constant covariance");

                let shift = self.shift(t, lin);
                let x_minus_v = lin.x - &scratch.offsets[slot];
                let x_plus_phi = lin.x + &shift;
                let solved_xv = cov.solve(&x_minus_v);
                let solved_xp = cov.solve(&x_plus_phi);
                let v_plus_phi = &scratch.offsets[slot] + &shift;

                let log_h = g_scale
                    * (0.5 * (1.0 / beta + n + 1.0) * x_minus_v.dot(&solved_xv)
                        - 0.5 * n * beta * x_plus_phi.dot(&solved_xp)
                        + (n + 1.0) * scratch.solved_mean_diff.dot(&v_plus_phi)
                        - x_minus_v.dot(&solved_xp));
                model.log_q(t, lin.x_prev, lin.x) + log_h
            }
        }
    }

    fn log_q_factor(&self, t: usize, lin: &LineageView) -> f64 {
        match self.strategy.flavor {
            PcnlFlavor::Marginal => self.strategy.model.log_q(t, lin.x_prev, lin.x),
            PcnlFlavor::Aux => self.aux_numerator(t, lin).expect("covariance must be SPD"),
            PcnlFlavor::AuxSmoothing => {
                let mut lq = self.aux_numerator(t, lin).expect("covariance must be SPD");
                if t > 0 {
                    lq += self.smoothing_ratio(t, lin).expect("covariance must be SPD");
                }
                lq
            }
        }
    }
}
