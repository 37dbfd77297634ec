//! Linear-Gaussian toy benchmark: random-walk dynamics observed with unit
//! noise.

use nalgebra::{DMatrix, DVector};

use super::{Decomposition, FeynmanKac, GaussianDynamics, Trajectory};
use crate::error::{Error, Result};
use crate::gauss;
use crate::Prng;

/// `M_t = N(x_t; x_{t-1}, λI)` (with `M_0 = N(0, λI)`) and
/// `G_t = N(y_t; x_t, I)`.
#[derive(Debug, Clone)]
pub struct Lgssm {
    dim: usize,
    horizon: usize,
    lambda: f64,
    obs: Vec<DVector<f64>>,
}

impl Lgssm {
    pub fn new(dim: usize, horizon: usize, lambda: f64, obs: Vec<DVector<f64>>) -> Result<Self> {
        if dim == 0 || horizon == 0 {
            return Err(Error::config("dimension and horizon must be positive"));
        }
        if lambda <= 0.0 {
            return Err(Error::config("lambda must be positive"));
        }
        if obs.len() != horizon || obs.iter().any(|y| y.len() != dim) {
            return Err(Error::config("observations must be horizon x dim"));
        }
        Ok(Self { dim, horizon, lambda, obs })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn observations(&self) -> &[DVector<f64>] {
        &self.obs
    }

    /// Draws a latent path and observations from the generative model.
    pub fn simulate(
        dim: usize,
        horizon: usize,
        lambda: f64,
        rng: &mut Prng,
    ) -> (Trajectory, Vec<DVector<f64>>) {
        let sd = lambda.sqrt();
        let mut states = Vec::with_capacity(horizon);
        let mut obs = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let noise = gauss::std_normal_vector(dim, rng) * sd;
            let x = if t == 0 { noise } else { &states[t - 1] + noise };
            obs.push(&x + gauss::std_normal_vector(dim, rng));
            states.push(x);
        }
        (Trajectory::new(states).expect("simulated path is finite"), obs)
    }

    fn prior_mean<'a>(&self, t: usize, x_prev: Option<&'a DVector<f64>>) -> Option<&'a DVector<f64>> {
        if t == 0 {
            None
        } else {
            Some(x_prev.expect("x_prev is required for t >= 1"))
        }
    }
}

impl FeynmanKac for Lgssm {
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
        let mut g = match self.prior_mean(t, x_prev) {
            Some(prev) => (prev - x) / self.lambda,
            None => -x / self.lambda,
        };
        g += &self.obs[t] - x;
        g
    }

    fn grad_log_q_xprev(&self, t: usize, x_prev: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        debug_assert!(t >= 1);
        (x - x_prev) / self.lambda
    }

    fn decomposition(&self) -> Option<&dyn Decomposition> {
        Some(self)
    }
}

impl Decomposition for Lgssm {
    fn log_m(&self, t: usize, x_prev: Option<&DVector<f64>>, x: &DVector<f64>) -> f64 {
        match self.prior_mean(t, x_prev) {
            Some(prev) => gauss::iso_logpdf(x, prev, self.lambda),
            None => {
                let zero = DVector::zeros(self.dim);
                gauss::iso_logpdf(x, &zero, self.lambda)
            }
        }
    }

    fn sample_m(&self, t: usize, x_prev: Option<&DVector<f64>>, rng: &mut Prng) -> DVector<f64> {
        let noise = gauss::std_normal_vector(self.dim, rng) * self.lambda.sqrt();
        match self.prior_mean(t, x_prev) {
            Some(prev) => prev + noise,
            None => noise,
        }
    }

    fn log_g(&self, t: usize, _x_prev: Option<&DVector<f64>>, x: &DVector<f64>) -> f64 {
        gauss::iso_logpdf(&self.obs[t], x, 1.0)
    }

    fn grad_log_g_x(&self, t: usize, _x_prev: Option<&DVector<f64>>, x: &DVector<f64>)
        -> DVector<f64> {
        &self.obs[t] - x
    }

    fn grad_log_g_xprev(&self, _t: usize, _x_prev: &DVector<f64>, _x: &DVector<f64>)
        -> DVector<f64> {
        DVector::zeros(self.dim)
    }
}

impl GaussianDynamics for Lgssm {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn mean(&self, t: usize, x_prev: Option<&DVector<f64>>) -> DVector<f64> {
        match self.prior_mean(t, x_prev) {
            Some(prev) => prev.clone(),
            None => DVector::zeros(self.dim),
        }
    }

    fn cov(&self, _t: usize, _x_prev: Option<&DVector<f64>>) -> DMatrix<f64> {
        DMatrix::from_diagonal_element(self.dim, self.dim, self.lambda)
    }

    fn constant_cov(&self) -> bool {
        true
    }

    fn affine_coeffs(&self, t: usize) -> Option<(DMatrix<f64>, DVector<f64>)> {
        let f = if t == 0 {
            DMatrix::zeros(self.dim, self.dim)
        } else {
            DMatrix::identity(self.dim, self.dim)
        };
        Some((f, DVector::zeros(self.dim)))
    }
}
