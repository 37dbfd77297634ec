//! The Feynman–Kac target abstraction and the built-in benchmark models.
//!
//! A target is a product of positive factors `Q_t(x_{t-1:t})` over time steps
//! `t = 0..T` (the step-0 factor takes no predecessor). Models may expose a
//! decomposition `Q_t = M_t · G_t` into a mutation density `M_t` and a
//! potential `G_t`, which several strategies require, and models with
//! (conditionally) Gaussian mutation kernels additionally implement
//! [`GaussianDynamics`].
//!
//! All time indices in this crate are zero-based: step `0` has no
//! predecessor, and contributions indexed past the horizon are ignored.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::Prng;

mod lgssm;
mod path_space;
mod stochvol;

pub use lgssm::Lgssm;
pub use path_space::{flatten_to_path_space, PathSpaceDynamics, PathSpaceModel};
pub use stochvol::StochVol;

/// A path `x_{0..T-1}` through the state space.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(states: Vec<DVector<f64>>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::config("trajectory must have at least one step"));
        }
        let dim = states[0].len();
        for (t, x) in states.iter().enumerate() {
            if x.len() != dim {
                return Err(Error::config(format!(
                    "trajectory state {t} has dimension {} but expected {dim}",
                    x.len()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Evaluation { t, what: "non-finite trajectory state".into() });
            }
        }
        Ok(Self { states })
    }

    pub fn zeros(horizon: usize, dim: usize) -> Self {
        Self { states: vec![DVector::zeros(dim); horizon] }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn state(&self, t: usize) -> &DVector<f64> {
        &self.states[t]
    }

    pub fn state_mut(&mut self, t: usize) -> &mut DVector<f64> {
        &mut self.states[t]
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    /// Concatenates all states into a single `T·D` vector.
    pub fn stack(&self) -> DVector<f64> {
        let d = self.dim();
        let mut out = DVector::zeros(self.len() * d);
        for (t, x) in self.states.iter().enumerate() {
            out.rows_mut(t * d, d).copy_from(x);
        }
        out
    }

    /// Splits a stacked `T·D` vector back into `T` states of dimension `D`.
    pub fn unstack(stacked: &DVector<f64>, horizon: usize, dim: usize) -> Self {
        assert_eq!(stacked.len(), horizon * dim, "stacked path has the wrong length");
        let states =
            (0..horizon).map(|t| DVector::from(stacked.rows(t * dim, dim).clone_owned())).collect();
        Self { states }
    }
}

/// Decomposition of the target factors into mutation kernels and potentials,
/// `Q_t = M_t · G_t`.
pub trait Decomposition: Send + Sync {
    /// `log M_t(x | x_prev)`; `x_prev` is `None` iff `t == 0`.
    fn log_m(&self, t: usize, x_prev: Option<&DVector<f64>>, x: &DVector<f64>) -> f64;
    /// Draws from `M_t(· | x_prev)`.
    fn sample_m(&self, t: usize, x_prev: Option<&DVector<f64>>, rng: &mut Prng) -> DVector<f64>;
    /// `log G_t(x_{t-1:t})`.
    fn log_g(&self, t: usize, x_prev: Option<&DVector<f64>>, x: &DVector<f64>) -> f64;
    /// `∇_x log G_t(x_{t-1:t})`.
    fn grad_log_g_x(&self, t: usize, x_prev: Option<&DVector<f64>>, x: &DVector<f64>)
        -> DVector<f64>;
    /// `∇_{x_prev} log G_t(x_{t-1:t})`; only called for `t >= 1`.
    fn grad_log_g_xprev(&self, t: usize, x_prev: &DVector<f64>, x: &DVector<f64>) -> DVector<f64>;
}

/// An evaluable, differentiable Feynman–Kac model.
///
/// Implementations must be pure and safe to evaluate from many threads; all
/// built-in models are immutable after construction.
pub trait FeynmanKac: Send + Sync {
    /// Number of time steps `T`.
    fn horizon(&self) -> usize;
    /// State dimension `D`.
    fn dim(&self) -> usize;
    /// `log Q_t(x_{t-1:t})`; `x_prev` is `None` iff `t == 0` and is ignored
    /// in that case.
    fn log_q(&self, t: usize, x_prev: Option<&DVector<f64>>, x: &DVector<f64>) -> f64;
    /// `∇_x log Q_t(x_{t-1:t})`.
    fn grad_log_q_x(&self, t: usize, x_prev: Option<&DVector<f64>>, x: &DVector<f64>)
        -> DVector<f64>;
    /// `∇_{x_prev} log Q_t(x_{t-1:t})`; only called for `t >= 1`.
    fn grad_log_q_xprev(&self, t: usize, x_prev: &DVector<f64>, x: &DVector<f64>) -> DVector<f64>;
    /// The mutation/potential decomposition, when the model has one.
    fn decomposition(&self) -> Option<&dyn Decomposition> {
        None
    }
}

/// Conditionally Gaussian prior dynamics `M_t = N(m_t(x_{t-1}), C_t(x_{t-1}))`.
pub trait GaussianDynamics: Send + Sync {
    fn horizon(&self) -> usize;
    fn dim(&self) -> usize;
    /// Mean `m_t(x_prev)`; the step-0 mean is a constant and ignores `x_prev`.
    fn mean(&self, t: usize, x_prev: Option<&DVector<f64>>) -> DVector<f64>;
    /// Covariance `C_t(x_prev)`. When [`constant_cov`](Self::constant_cov)
    /// holds, `x_prev` is ignored and may be `None`.
    fn cov(&self, t: usize, x_prev: Option<&DVector<f64>>) -> DMatrix<f64>;
    /// Whether `C_t(x_prev) = C_t` does not depend on the previous state.
    fn constant_cov(&self) -> bool {
        false
    }
    /// Affine mean coefficients `(F_t, b_t)` with `m_t(x) = F_t x + b_t`,
    /// when the dynamics are affine. At `t == 0` the factor is zero and the
    /// offset is the initial mean. Affine dynamics must also have constant
    /// covariances.
    fn affine_coeffs(&self, _t: usize) -> Option<(DMatrix<f64>, DVector<f64>)> {
        None
    }
    fn is_affine(&self) -> bool {
        self.affine_coeffs(0).is_some()
    }
}

/// Unnormalised log-target `log π_T(x_{0..T-1}) = Σ_t log Q_t`, the "energy"
/// of a trajectory.
pub fn log_target(model: &dyn FeynmanKac, traj: &Trajectory) -> Result<f64> {
    if traj.len() != model.horizon() || traj.dim() != model.dim() {
        return Err(Error::config(format!(
            "trajectory shape {}x{} does not match model {}x{}",
            traj.len(),
            traj.dim(),
            model.horizon(),
            model.dim()
        )));
    }
    let mut total = 0.0;
    for t in 0..traj.len() {
        let x_prev = (t > 0).then(|| traj.state(t - 1));
        let lq = model.log_q(t, x_prev, traj.state(t));
        if !lq.is_finite() {
            return Err(Error::Evaluation { t, what: format!("log Q = {lq}") });
        }
        total += lq;
    }
    Ok(total)
}

/// Filter gradient `∇_x log π_t(x_{0..t}) = ∇_x log Q_t(x_{t-1:t})`.
pub fn grad_filter(
    model: &dyn FeynmanKac,
    t: usize,
    x_prev: Option<&DVector<f64>>,
    x: &DVector<f64>,
) -> DVector<f64> {
    model.grad_log_q_x(t, x_prev, x)
}

/// Smoothing gradient
/// `∇_x log π_T = ∇_x [log Q_t(x_{t-1:t}) + log Q_{t+1}(x_{t:t+1})]`.
///
/// `x_next` is ignored at the final step, where the second term vanishes.
pub fn grad_smoothing(
    model: &dyn FeynmanKac,
    t: usize,
    x_prev: Option<&DVector<f64>>,
    x: &DVector<f64>,
    x_next: Option<&DVector<f64>>,
) -> DVector<f64> {
    let mut g = model.grad_log_q_x(t, x_prev, x);
    if t + 1 < model.horizon() {
        let next = x_next.expect("x_next is required before the final step");
        g += model.grad_log_q_xprev(t + 1, x, next);
    }
    g
}

/// Smoothing-potential gradient
/// `∇_x [log G_t(x_{t-1:t}) + log G_{t+1}(x_{t:t+1})]`, with the same
/// final-step convention as [`grad_smoothing`].
pub fn grad_potential_smoothing(
    model: &dyn FeynmanKac,
    t: usize,
    x_prev: Option<&DVector<f64>>,
    x: &DVector<f64>,
    x_next: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    let decomp = model
        .decomposition()
        .ok_or_else(|| Error::config("model has no mutation/potential decomposition"))?;
    let mut g = decomp.grad_log_g_x(t, x_prev, x);
    if t + 1 < model.horizon() {
        let next = x_next.expect("x_next is required before the final step");
        g += decomp.grad_log_g_xprev(t + 1, x, next);
    }
    Ok(g)
}

/// Builds the linear-Gaussian benchmark model: random-walk dynamics
/// `N(x_t; x_{t-1}, λI)` (started at `N(0, λI)`) observed through
/// `G_t = N(y_t; x_t, I)`.
pub fn make_lgssm(
    dim: usize,
    horizon: usize,
    lambda: f64,
    observations: Vec<DVector<f64>>,
) -> Result<Lgssm> {
    Lgssm::new(dim, horizon, lambda, observations)
}

/// Builds the multivariate stochastic-volatility benchmark model:
/// autoregressive dynamics `N(x_t; φ x_{t-1}, C)` with `C = τ[(1-ρ)I + ρ11ᵀ]`,
/// stationary initial distribution, and potential `N(y_t; 0, diag(exp x_t))`.
pub fn make_stochvol(
    dim: usize,
    horizon: usize,
    phi: f64,
    rho: f64,
    tau: f64,
    observations: Vec<DVector<f64>>,
) -> Result<StochVol> {
    StochVol::new(dim, horizon, phi, rho, tau, observations)
}

/// Central finite difference of a scalar function, the documented fallback
/// for models without analytic gradients (accuracy ~1e-5 with the default
/// step).
pub fn grad_central_diff(
    f: impl Fn(&DVector<f64>) -> f64,
    x: &DVector<f64>,
    step: f64,
) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let x0 = x[i];
        xp[i] = x0 + step;
        let hi = f(&xp);
        xp[i] = x0 - step;
        let lo = f(&xp);
        xp[i] = x0;
        g[i] = (hi - lo) / (2.0 * step);
    }
    g
}

/// Wrapper that replaces a model's analytic gradients with central finite
/// differences of its `log_q` (and `log_g`, when decomposed). Slower than
/// analytic gradients; intended as an opt-in fallback for user models.
pub struct FdGradModel<M: FeynmanKac> {
    inner: M,
    step: f64,
}

impl<M: FeynmanKac> FdGradModel<M> {
    pub fn new(inner: M) -> Self {
        Self { inner, step: 1e-5 }
    }

    pub fn with_step(inner: M, step: f64) -> Self {
        Self { inner, step }
    }
}

impl<M: FeynmanKac> FeynmanKac for FdGradModel<M> {
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn log_q(&self, t: usize, x_prev: Option<&DVector<f64>>, x: &DVector<f64>) -> f64 {
        self.inner.log_q(t, x_prev, x)
    }

    fn grad_log_q_x(&self, t: usize, x_prev: Option<&DVector<f64>>, x: &DVector<f64>)
        -> DVector<f64> {
        grad_central_diff(|v| self.inner.log_q(t, x_prev, v), x, self.step)
    }

    fn grad_log_q_xprev(&self, t: usize, x_prev: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        grad_central_diff(|v| self.inner.log_q(t, Some(v), x), x_prev, self.step)
    }

    fn decomposition(&self) -> Option<&dyn Decomposition> {
        self.inner.decomposition()
    }
}
