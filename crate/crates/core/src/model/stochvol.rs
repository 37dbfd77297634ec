//! Multivariate stochastic-volatility benchmark model.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{Decomposition, FeynmanKac, GaussianDynamics, Trajectory};
use crate::error::{Error, Result};
use crate::gauss::{self, SpdMatrix};
use crate::Prng;

/// Autoregressive log-volatility dynamics `N(x_t; φ x_{t-1}, C)` with
/// `C = τ[(1-ρ)I + ρ 1 1ᵀ]`, started from the stationary distribution
/// `N(0, C / (1-φ²))`, and observation potential
/// `G_t = N(y_t; 0, diag(exp x_t))`.
#[derive(Debug, Clone)]
pub struct StochVol {
    dim: usize,
    horizon: usize,
    phi: f64,
    cov: SpdMatrix,
    cov0: SpdMatrix,
    // Dense precisions cached for the gradient and density hot paths.
    prec: DMatrix<f64>,
    prec0: DMatrix<f64>,
    obs: Vec<DVector<f64>>,
}

impl StochVol {
    pub fn new(
        dim: usize,
        horizon: usize,
        phi: f64,
        rho: f64,
        tau: f64,
        obs: Vec<DVector<f64>>,
    ) -> Result<Self> {
        if dim == 0 || horizon == 0 {
            return Err(Error::config("dimension and horizon must be positive"));
        }
        if phi.abs() >= 1.0 {
            return Err(Error::config("phi must lie in (-1, 1)"));
        }
        if rho.abs() >= 1.0 {
            return Err(Error::config("rho must lie in (-1, 1)"));
        }
        if tau <= 0.0 {
            return Err(Error::config("tau must be positive"));
        }
        if obs.len() != horizon || obs.iter().any(|y| y.len() != dim) {
            return Err(Error::config("observations must be horizon x dim"));
        }
        let c = Self::build_cov(dim, rho, tau)?;
        let c0 = SpdMatrix::new(c.dense() / (1.0 - phi * phi))?;
        let prec = c.inverse();
        let prec0 = c0.inverse();
        Ok(Self { dim, horizon, phi, cov: c, cov0: c0, prec, prec0, obs })
    }

    /// `C = τ[(1-ρ)I + ρ 1 1ᵀ]`; positive definite iff `ρ > -1/(D-1)`.
    fn build_cov(dim: usize, rho: f64, tau: f64) -> Result<SpdMatrix> {
        let m = DMatrix::from_fn(dim, dim, |i, j| if i == j { tau } else { tau * rho });
        SpdMatrix::new(m).map_err(|_| {
            Error::config(format!(
                "stochastic-volatility covariance is not positive definite \
                 (need rho > -1/(D-1); got rho such that tau[(1-rho)I + rho 11^T] fails at D={dim})"
            ))
        })
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn transition_cov(&self) -> &SpdMatrix {
        &self.cov
    }

    pub fn stationary_cov(&self) -> &SpdMatrix {
        &self.cov0
    }

    pub fn observations(&self) -> &[DVector<f64>] {
        &self.obs
    }

    /// Draws a latent path and observations from the generative model.
    pub fn simulate(
        dim: usize,
        horizon: usize,
        phi: f64,
        rho: f64,
        tau: f64,
        rng: &mut Prng,
    ) -> Result<(Trajectory, Vec<DVector<f64>>)> {
        let c = Self::build_cov(dim, rho, tau)?;
        let c0 = SpdMatrix::new(c.dense() / (1.0 - phi * phi))?;
        let mut states: Vec<DVector<f64>> = Vec::with_capacity(horizon);
        let mut obs = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let x = if t == 0 {
                gauss::mvn_sample(&DVector::zeros(dim), &c0, rng)
            } else {
                gauss::mvn_sample(&(&states[t - 1] * phi), &c, rng)
            };
            let y = DVector::from_fn(dim, |d, _| {
                (0.5 * x[d]).exp() * rng.sample::<f64, _>(rand_distr::StandardNormal)
            });
            obs.push(y);
            states.push(x);
        }
        Ok((Trajectory::new(states)?, obs))
    }

    fn step_cov(&self, t: usize) -> &SpdMatrix {
        if t == 0 {
            &self.cov0
        } else {
            &self.cov
        }
    }

    fn step_prec(&self, t: usize) -> &DMatrix<f64> {
        if t == 0 {
            &self.prec0
        } else {
            &self.prec
        }
    }

    fn step_mean(&self, t: usize, x_prev: Option<&DVector<f64>>) -> DVector<f64> {
        if t == 0 {
            DVector::zeros(self.dim)
        } else {
            x_prev.expect("x_prev is required for t >= 1") * self.phi
        }
    }
}

impl FeynmanKac for StochVol {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn log_q(&self, t: usize, x_prev: Option<&DVector<f64>>, x: &DVector<f64>) -> f64 {
        self.log_m(t, x_prev, x) + self.log_g(t, x_prev, x)
    }

    fn grad_log_q_x(&self, t: usize, x_prev: Option<&DVector<f64>>, x: &DVector<f64>)
        -> DVector<f64> {
        let mean = self.step_mean(t, x_prev);
        let mut g = -(self.step_prec(t) * (x - mean));
        g += self.grad_log_g_x(t, x_prev, x);
        g
    }

    fn grad_log_q_xprev(&self, t: usize, x_prev: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        debug_assert!(t >= 1);
        // The potential does not depend on the previous state.
        (&self.prec * (x - x_prev * self.phi)) * self.phi
    }

    fn decomposition(&self) -> Option<&dyn Decomposition> {
        Some(self)
    }
}

impl Decomposition for StochVol {
    fn log_m(&self, t: usize, x_prev: Option<&DVector<f64>>, x: &DVector<f64>) -> f64 {
        let cov = self.step_cov(t);
        let diff = x - self.step_mean(t, x_prev);
        let quad = diff.dot(&(self.step_prec(t) * &diff));
        -0.5 * (self.dim as f64 * gauss::LN_2PI + cov.log_det() + quad)
    }

    fn sample_m(&self, t: usize, x_prev: Option<&DVector<f64>>, rng: &mut Prng) -> DVector<f64> {
        let mean = self.step_mean(t, x_prev);
        gauss::mvn_sample(&mean, self.step_cov(t), rng)
    }

    fn log_g(&self, t: usize, _x_prev: Option<&DVector<f64>>, x: &DVector<f64>) -> f64 {
        let y = &self.obs[t];
        let mut total = 0.0;
        for d in 0..self.dim {
            total += -0.5 * (gauss::LN_2PI + x[d] + y[d] * y[d] * (-x[d]).exp());
        }
        total
    }

    fn grad_log_g_x(&self, t: usize, _x_prev: Option<&DVector<f64>>, x: &DVector<f64>)
        -> DVector<f64> {
        let y = &self.obs[t];
        DVector::from_fn(self.dim, |d, _| -0.5 * (1.0 - y[d] * y[d] * (-x[d]).exp()))
    }

    fn grad_log_g_xprev(&self, _t: usize, _x_prev: &DVector<f64>, _x: &DVector<f64>)
        -> DVector<f64> {
        DVector::zeros(self.dim)
    }
}

impl GaussianDynamics for StochVol {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn mean(&self, t: usize, x_prev: Option<&DVector<f64>>) -> DVector<f64> {
        self.step_mean(t, x_prev)
    }

    fn cov(&self, t: usize, _x_prev: Option<&DVector<f64>>) -> DMatrix<f64> {
        self.step_cov(t).dense().clone()
    }

    fn constant_cov(&self) -> bool {
        true
    }

    fn affine_coeffs(&self, t: usize) -> Option<(DMatrix<f64>, DVector<f64>)> {
        let f = if t == 0 {
            DMatrix::zeros(self.dim, self.dim)
        } else {
            DMatrix::from_diagonal_element(self.dim, self.dim, self.phi)
        };
        Some((f, DVector::zeros(self.dim)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_stochvol;
    use rand::SeedableRng;

    #[test]
    fn default_parameter_grid_constructs() {
        for tau in [0.1, 0.5, 1.0, 2.0] {
            let obs = vec![DVector::zeros(4); 3];
            assert!(make_stochvol(4, 3, 0.9, 0.25, tau, obs).is_ok());
        }
    }

    #[test]
    fn potential_gradient_at_origin() {
        // At y=0, x=0 every component of ∇ log g is -1/2.
        let model = make_stochvol(3, 1, 0.9, 0.25, 1.0, vec![DVector::zeros(3)]).unwrap();
        let g = model.grad_log_g_x(0, None, &DVector::zeros(3));
        for d in 0..3 {
            assert!((g[d] + 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn stationary_covariance_scaling() {
        let model = make_stochvol(2, 1, 0.9, 0.25, 1.0, vec![DVector::zeros(2)]).unwrap();
        let expected = model.transition_cov().dense() / (1.0 - 0.81);
        assert!((model.stationary_cov().dense() - expected).norm() < 1e-10);
    }

    #[test]
    fn rejects_non_positive_definite_covariance() {
        // rho <= -1/(D-1) makes C indefinite.
        let obs = vec![DVector::zeros(3); 2];
        assert!(make_stochvol(3, 2, 0.9, -0.6, 1.0, obs).is_err());
    }

    #[test]
    fn simulated_initial_state_matches_stationary_variance() {
        let mut rng = Prng::seed_from_u64(77);
        let n = 20_000;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let (x, _) = StochVol::simulate(1, 1, 0.9, 0.0, 1.0, &mut rng).unwrap();
            sum_sq += x.state(0)[0] * x.state(0)[0];
        }
        let var = sum_sq / n as f64;
        let expect = 1.0 / (1.0 - 0.81);
        // Var of the variance estimate is about 2 var² / n.
        let se = (2.0 * expect * expect / n as f64).sqrt();
        assert!((var - expect).abs() < 4.0 * se, "var {var} vs {expect}");
    }
}
