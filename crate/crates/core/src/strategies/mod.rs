//! Concrete proposal/weighting strategies for the CSMC sweep engine.
//!
//! Five families, each generalising a classical MCMC kernel to `T` time
//! steps and `N+1` particles:
//!
//! * [`BootstrapCsmc`]: prior proposals weighted by the potential (`csmc`);
//! * [`LocalStrategy`]: isotropic Gaussian proposals around the reference,
//!   with optional filter- or smoothing-gradient drift (`p-rwm`, `p-amala`,
//!   `p-mala`, `p-amala+`);
//! * [`GainStrategy`]: proposals blending the conditionally Gaussian prior
//!   dynamics with gradient drift through the gain matrix
//!   `A_t = (C_t + (δ/2)I)^{-1} C_t` (`p-agrad`, `p-mgrad`, `p-agrad+`);
//! * [`PcnlStrategy`]: prior-preconditioned Crank–Nicolson proposals
//!   (`p-apcnl`, `p-pcnl`, `p-apcnl+`);
//! * [`TwistedStrategy`]: affine-Gaussian proposals conditioned on all
//!   future auxiliary variables via Kalman recursions (`tp-agrad`,
//!   `tp-agrad+`, `tp-apcnl`, `tp-apcnl+`).
//!
//! The `*1` names (`rwm1`, `mala1`, `amala1`, `agrad1`, `imh1`) run the
//! corresponding kernel on the path-space flattening of the model (a single
//! `T·D`-dimensional step) and serve as multi-proposal "classical" MCMC
//! baselines.
//!
//! The marginal variants (`p-mala`, `p-mgrad`, `p-pcnl`) integrate the
//! auxiliary variable out of the weights; the auxiliary variants carry it
//! explicitly. The gradient switch κ lives in the sweep configuration, not
//! in the strategy name: with `kappa = 0` every gradient-informed kernel
//! reduces to its gradient-free counterpart transcript-for-transcript.

use std::sync::Arc;

use nalgebra::DVector;

use crate::csmc::{KernelStrategy, MarkovOrder};
use crate::error::{Error, Result};
use crate::model::{flatten_to_path_space, FeynmanKac, GaussianDynamics};

mod bootstrap;
mod gain;
mod local;
mod pcnl;
mod twisted;

pub use bootstrap::BootstrapCsmc;
pub use gain::{GainFlavor, GainStrategy};
pub use local::{LocalFlavor, LocalStrategy};
pub use pcnl::{PcnlFlavor, PcnlPrecond, PcnlStrategy};
pub use twisted::TwistedStrategy;

/// Registry entry describing one named strategy and its model requirements.
pub struct StrategyInfo {
    pub name: &'static str,
    pub needs_decomposition: bool,
    pub needs_dynamics: bool,
    pub needs_constant_cov: bool,
    pub needs_affine: bool,
    /// Runs on the path-space flattening of the model.
    pub path_space: bool,
    pub markov_order: MarkovOrder,
    pub description: &'static str,
}

/// Options selecting between behaviour-preserving implementation choices.
#[derive(Debug, Clone)]
pub struct BuildOptions {
    /// Preconditioner for the PCN family.
    pub pcnl_precond: PcnlPrecond,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { pcnl_precond: PcnlPrecond::PriorStep }
    }
}

pub const STRATEGY_NAMES: [&str; 20] = [
    "csmc", "p-rwm", "p-amala", "p-mala", "p-amala+", "p-agrad", "p-mgrad", "p-agrad+",
    "tp-agrad", "tp-agrad+", "p-apcnl", "p-pcnl", "p-apcnl+", "tp-apcnl", "tp-apcnl+", "rwm1",
    "mala1", "amala1", "agrad1", "imh1",
];

pub fn registry() -> Vec<StrategyInfo> {
    use MarkovOrder::{First, Second};
    #[allow(clippy::too_many_arguments)]
    fn entry(
        name: &'static str,
        needs_decomposition: bool,
        needs_dynamics: bool,
        needs_constant_cov: bool,
        needs_affine: bool,
        path_space: bool,
        markov_order: MarkovOrder,
        description: &'static str,
    ) -> StrategyInfo {
        StrategyInfo {
            name,
            needs_decomposition,
            needs_dynamics,
            needs_constant_cov,
            needs_affine,
            path_space,
            markov_order,
            description,
        }
    }
    vec![
        entry("csmc", true, false, false, false, false, First, "bootstrap proposals from the prior dynamics"),
        entry("p-rwm", false, false, false, false, false, First, "random-walk proposals around the reference"),
        entry("p-amala", false, false, false, false, false, First, "filter-gradient Langevin proposals, auxiliary weights"),
        entry("p-mala", false, false, false, false, false, First, "filter-gradient Langevin proposals, marginal weights"),
        entry("p-amala+", false, false, false, false, false, Second, "smoothing-gradient Langevin proposals, auxiliary weights"),
        entry("p-agrad", true, true, false, false, false, First, "prior-gain gradient proposals, auxiliary weights"),
        entry("p-mgrad", true, true, true, false, false, First, "prior-gain gradient proposals, marginal weights"),
        entry("p-agrad+", true, true, false, false, false, Second, "prior-gain smoothing-gradient proposals, auxiliary weights"),
        entry("tp-agrad", true, true, true, true, false, First, "Kalman-twisted prior-gain proposals"),
        entry("tp-agrad+", true, true, true, true, false, Second, "Kalman-twisted smoothing-gradient proposals"),
        entry("p-apcnl", true, true, false, false, false, First, "preconditioned Crank-Nicolson Langevin, auxiliary weights"),
        entry("p-pcnl", true, true, true, false, false, First, "preconditioned Crank-Nicolson Langevin, marginal weights"),
        entry("p-apcnl+", true, true, false, false, false, Second, "preconditioned Crank-Nicolson smoothing-gradient, auxiliary weights"),
        entry("tp-apcnl", true, true, true, true, false, First, "Kalman-twisted preconditioned Crank-Nicolson"),
        entry("tp-apcnl+", true, true, true, true, false, Second, "Kalman-twisted preconditioned Crank-Nicolson, smoothing gradients"),
        entry("rwm1", false, false, false, false, true, First, "multi-proposal random walk on path space"),
        entry("mala1", false, false, false, false, true, First, "multi-proposal Langevin on path space, marginal weights"),
        entry("amala1", false, false, false, false, true, First, "multi-proposal Langevin on path space, auxiliary weights"),
        entry("agrad1", true, true, true, true, true, First, "multi-proposal prior-gain Langevin on path space"),
        entry("imh1", true, true, true, true, true, First, "independence sampler from the path-space prior"),
    ]
}

/// Builds a named strategy, validating its model/dynamics requirements.
pub fn build_strategy(
    name: &str,
    model: Arc<dyn FeynmanKac>,
    dynamics: Option<Arc<dyn GaussianDynamics>>,
    opts: &BuildOptions,
) -> Result<Box<dyn KernelStrategy>> {
    let info = registry()
        .into_iter()
        .find(|i| i.name == name)
        .ok_or_else(|| Error::config(format!("unknown strategy '{name}'")))?;

    if info.needs_decomposition && model.decomposition().is_none() {
        return Err(Error::config(format!(
            "strategy '{name}' requires a mutation/potential decomposition"
        )));
    }
    if info.needs_dynamics {
        let d = dynamics.as_ref().ok_or_else(|| {
            Error::config(format!(
                "strategy '{name}' requires (conditionally) Gaussian prior dynamics"
            ))
        })?;
        if info.needs_constant_cov && !d.constant_cov() {
            return Err(Error::config(format!(
                "strategy '{name}' requires constant covariances C_t(x) = C_t"
            )));
        }
        if info.needs_affine && !d.is_affine() {
            return Err(Error::config(format!(
                "strategy '{name}' requires affine dynamics m_t(x) = F_t x + b_t"
            )));
        }
    }

    match name {
        "csmc" => Ok(Box::new(BootstrapCsmc::new(model)?)),
        "p-rwm" => Ok(Box::new(LocalStrategy::new(model, LocalFlavor::RandomWalk))),
        "p-amala" => Ok(Box::new(LocalStrategy::new(model, LocalFlavor::AuxFilter))),
        "p-mala" => Ok(Box::new(LocalStrategy::new(model, LocalFlavor::Marginal))),
        "p-amala+" => Ok(Box::new(LocalStrategy::new(model, LocalFlavor::AuxSmoothing))),
        "p-agrad" => Ok(Box::new(GainStrategy::new(model, dynamics.unwrap(), GainFlavor::Aux)?)),
        "p-mgrad" => {
            Ok(Box::new(GainStrategy::new(model, dynamics.unwrap(), GainFlavor::Marginal)?))
        }
        "p-agrad+" => {
            Ok(Box::new(GainStrategy::new(model, dynamics.unwrap(), GainFlavor::AuxSmoothing)?))
        }
        "tp-agrad" => Ok(Box::new(TwistedStrategy::new(
            model,
            dynamics.unwrap(),
            crate::twist::ObsCovKind::Identity,
            false,
        )?)),
        "tp-agrad+" => Ok(Box::new(TwistedStrategy::new(
            model,
            dynamics.unwrap(),
            crate::twist::ObsCovKind::Identity,
            true,
        )?)),
        "p-apcnl" => Ok(Box::new(PcnlStrategy::new(
            model,
            dynamics.unwrap(),
            PcnlFlavor::Aux,
            opts.pcnl_precond.clone(),
        )?)),
        "p-pcnl" => Ok(Box::new(PcnlStrategy::new(
            model,
            dynamics.unwrap(),
            PcnlFlavor::Marginal,
            opts.pcnl_precond.clone(),
        )?)),
        "p-apcnl+" => Ok(Box::new(PcnlStrategy::new(
            model,
            dynamics.unwrap(),
            PcnlFlavor::AuxSmoothing,
            opts.pcnl_precond.clone(),
        )?)),
        "tp-apcnl" => Ok(Box::new(TwistedStrategy::new(
            model,
            dynamics.unwrap(),
            crate::twist::ObsCovKind::PriorCov,
            false,
        )?)),
        "tp-apcnl+" => Ok(Box::new(TwistedStrategy::new(
            model,
            dynamics.unwrap(),
            crate::twist::ObsCovKind::PriorCov,
            true,
        )?)),
        "rwm1" | "mala1" | "amala1" | "agrad1" | "imh1" => {
            let (flat, flat_dyn) = flatten_to_path_space(model, dynamics.as_deref())?;
            match name {
                "rwm1" => Ok(Box::new(LocalStrategy::new(flat, LocalFlavor::RandomWalk))),
                "mala1" => Ok(Box::new(LocalStrategy::new(flat, LocalFlavor::Marginal))),
                "amala1" => Ok(Box::new(LocalStrategy::new(flat, LocalFlavor::AuxFilter))),
                "agrad1" => {
                    let flat_dyn = flat_dyn.ok_or_else(|| {
                        Error::config("agrad1 requires affine dynamics for the path-space prior")
                    })?;
                    Ok(Box::new(GainStrategy::new(flat, flat_dyn, GainFlavor::Aux)?))
                }
                "imh1" => Ok(Box::new(BootstrapCsmc::new(flat)?)),
                _ => unreachable!(),
            }
        }
        other => Err(Error::config(format!("unknown strategy '{other}'"))),
    }
}

/// `κ (δ/2) g`, or an exact zero vector when the gradient switch is off.
pub(crate) fn gradient_shift(
    kappa: f64,
    delta: f64,
    dim: usize,
    grad: impl FnOnce() -> DVector<f64>,
) -> DVector<f64> {
    if kappa == 0.0 {
        DVector::zeros(dim)
    } else {
        grad() * (kappa * 0.5 * delta)
    }
}

/// `log N(u; x + shift, v·I) - log N(u; x, v·I)` as a difference of
/// quadratic forms; the normalising constants cancel exactly.
pub(crate) fn iso_shift_log_ratio(
    u: &DVector<f64>,
    x: &DVector<f64>,
    shift: &DVector<f64>,
    var: f64,
) -> f64 {
    let mut dot = 0.0;
    let mut norm_sq = 0.0;
    for i in 0..u.len() {
        let s = shift[i];
        dot += (u[i] - x[i]) * s;
        norm_sq += s * s;
    }
    (2.0 * dot - norm_sq) / (2.0 * var)
}
