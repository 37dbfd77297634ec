//! Path-space flattening: a `T`-step model re-expressed as a single `T·D`
//! dimensional step, so that multi-proposal "classical" MCMC kernels can be
//! run as single-step strategies.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{
    grad_potential_smoothing, grad_smoothing, log_target, Decomposition, FeynmanKac,
    GaussianDynamics, Trajectory,
};
use crate::error::{Error, Result};
use crate::Prng;

/// A single-step model whose factor is the full path target of the wrapped
/// model.
pub struct PathSpaceModel {
    inner: Arc<dyn FeynmanKac>,
    inner_horizon: usize,
    inner_dim: usize,
}

/// The joint Gaussian prior over the stacked path, available when the
/// wrapped dynamics are affine with constant covariances.
pub struct PathSpaceDynamics {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

/// Flattens a model (and, when affine, its prior dynamics) to a single
/// `T·D`-dimensional step.
pub fn flatten_to_path_space(
    model: Arc<dyn FeynmanKac>,
    dynamics: Option<&dyn GaussianDynamics>,
) -> Result<(Arc<PathSpaceModel>, Option<Arc<PathSpaceDynamics>>)> {
    let flat = Arc::new(PathSpaceModel {
        inner_horizon: model.horizon(),
        inner_dim: model.dim(),
        inner: model,
    });
    let dyn_flat = match dynamics {
        Some(dy) => Some(Arc::new(PathSpaceDynamics::new(dy)?)),
        None => None,
    };
    Ok((flat, dyn_flat))
}

impl PathSpaceModel {
    fn unstack(&self, x: &DVector<f64>) -> Trajectory {
        Trajectory::unstack(x, self.inner_horizon, self.inner_dim)
    }

    pub fn inner(&self) -> &dyn FeynmanKac {
        self.inner.as_ref()
    }
}

impl FeynmanKac for PathSpaceModel {
    fn horizon(&self) -> usize {
        1
    }

    fn dim(&self) -> usize {
        self.inner_horizon * self.inner_dim
    }

    fn log_q(&self, _t: usize, _x_prev: Option<&DVector<f64>>, x: &DVector<f64>) -> f64 {
        let traj = self.unstack(x);
        log_target(self.inner.as_ref(), &traj).unwrap_or(f64::NEG_INFINITY)
    }

    fn grad_log_q_x(&self, _t: usize, _x_prev: Option<&DVector<f64>>, x: &DVector<f64>)
        -> DVector<f64> {
        let traj = self.unstack(x);
        let d = self.inner_dim;
        let mut g = DVector::zeros(self.dim());
        for t in 0..self.inner_horizon {
            let x_prev = (t > 0).then(|| traj.state(t - 1));
            let x_next = (t + 1 < self.inner_horizon).then(|| traj.state(t + 1));
            let gt = grad_smoothing(self.inner.as_ref(), t, x_prev, traj.state(t), x_next);
            g.rows_mut(t * d, d).copy_from(&gt);
        }
        g
    }

    fn grad_log_q_xprev(&self, _t: usize, _x_prev: &DVector<f64>, _x: &DVector<f64>)
        -> DVector<f64> {
        unreachable!("path-space model has a single step")
    }

    fn decomposition(&self) -> Option<&dyn Decomposition> {
        self.inner.decomposition().map(|_| self as &dyn Decomposition)
    }
}

impl Decomposition for PathSpaceModel {
    fn log_m(&self, _t: usize, _x_prev: Option<&DVector<f64>>, x: &DVector<f64>) -> f64 {
        let decomp = self.inner.decomposition().expect("inner decomposition checked");
        let traj = self.unstack(x);
        (0..self.inner_horizon)
            .map(|t| decomp.log_m(t, (t > 0).then(|| traj.state(t - 1)), traj.state(t)))
            .sum()
    }

    fn sample_m(&self, _t: usize, _x_prev: Option<&DVector<f64>>, rng: &mut Prng) -> DVector<f64> {
        let decomp = self.inner.decomposition().expect("inner decomposition checked");
        let mut states: Vec<DVector<f64>> = Vec::with_capacity(self.inner_horizon);
        for t in 0..self.inner_horizon {
            let prev = (t > 0).then(|| &states[t - 1]);
            states.push(decomp.sample_m(t, prev, rng));
        }
        Trajectory::new(states).expect("prior draw is finite").stack()
    }

    fn log_g(&self, _t: usize, _x_prev: Option<&DVector<f64>>, x: &DVector<f64>) -> f64 {
        let decomp = self.inner.decomposition().expect("inner decomposition checked");
        let traj = self.unstack(x);
        (0..self.inner_horizon)
            .map(|t| decomp.log_g(t, (t > 0).then(|| traj.state(t - 1)), traj.state(t)))
            .sum()
    }

    fn grad_log_g_x(&self, _t: usize, _x_prev: Option<&DVector<f64>>, x: &DVector<f64>)
        -> DVector<f64> {
        let traj = self.unstack(x);
        let d = self.inner_dim;
        let mut g = DVector::zeros(self.dim());
        for t in 0..self.inner_horizon {
            let x_prev = (t > 0).then(|| traj.state(t - 1));
            let x_next = (t + 1 < self.inner_horizon).then(|| traj.state(t + 1));
            let gt = grad_potential_smoothing(self.inner.as_ref(), t, x_prev, traj.state(t), x_next)
                .expect("inner decomposition checked");
            g.rows_mut(t * d, d).copy_from(&gt);
        }
        g
    }

    fn grad_log_g_xprev(&self, _t: usize, _x_prev: &DVector<f64>, _x: &DVector<f64>)
        -> DVector<f64> {
        unreachable!("path-space model has a single step")
    }
}

impl PathSpaceDynamics {
    /// Assembles the joint prior moments of the stacked path from the
    /// per-step affine coefficients, block row by block row.
    fn new(dynamics: &dyn GaussianDynamics) -> Result<Self> {
        if !dynamics.constant_cov() {
            return Err(Error::config("path-space prior requires constant covariances"));
        }
        let horizon = dynamics.horizon();
        let d = dynamics.dim();
        let mut mean = DVector::zeros(horizon * d);
        let mut cov = DMatrix::zeros(horizon * d, horizon * d);

        let mut mu_prev = DVector::zeros(d);
        for t in 0..horizon {
            let (f, b) = dynamics
                .affine_coeffs(t)
                .ok_or_else(|| Error::config("path-space prior requires affine dynamics"))?;
            let mu_t = if t == 0 { b } else { &f * &mu_prev + &b };
            mean.rows_mut(t * d, d).copy_from(&mu_t);
            mu_prev = mu_t;

            // Diagonal block: Σ_{t,t} = F Σ_{t-1,t-1} Fᵀ + C_t.
            let c_t = dynamics.cov(t, None);
            let diag = if t == 0 {
                c_t
            } else {
                let prev = cov.view(((t - 1) * d, (t - 1) * d), (d, d)).clone_owned();
                &f * prev * f.transpose() + c_t
            };
            cov.view_mut((t * d, t * d), (d, d)).copy_from(&diag);

            // Off-diagonal blocks: Σ_{t,s} = F Σ_{t-1,s} for s < t.
            for s in 0..t {
                let above = cov.view(((t - 1) * d, s * d), (d, d)).clone_owned();
                let block = &f * above;
                cov.view_mut((t * d, s * d), (d, d)).copy_from(&block);
                cov.view_mut((s * d, t * d), (d, d)).copy_from(&block.transpose());
            }
        }
        Ok(Self { mean, cov })
    }

    pub fn joint_mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn joint_cov(&self) -> &DMatrix<f64> {
        &self.cov
    }
}

impl GaussianDynamics for PathSpaceDynamics {
    fn horizon(&self) -> usize {
        1
    }

    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn mean(&self, _t: usize, _x_prev: Option<&DVector<f64>>) -> DVector<f64> {
        self.mean.clone()
    }

    fn cov(&self, _t: usize, _x_prev: Option<&DVector<f64>>) -> DMatrix<f64> {
        self.cov.clone()
    }

    fn constant_cov(&self) -> bool {
        true
    }

    fn affine_coeffs(&self, _t: usize) -> Option<(DMatrix<f64>, DVector<f64>)> {
        Some((DMatrix::zeros(self.dim(), self.dim()), self.mean.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{grad_central_diff, make_lgssm, Lgssm};
    use rand::SeedableRng;

    fn fixture() -> Arc<Lgssm> {
        let mut rng = Prng::seed_from_u64(30);
        let (_, obs) = Lgssm::simulate(2, 3, 0.8, &mut rng);
        Arc::new(make_lgssm(2, 3, 0.8, obs).unwrap())
    }

    #[test]
    fn flattened_log_q_equals_log_target() {
        let model = fixture();
        let (flat, _) = flatten_to_path_space(model.clone(), None).unwrap();
        let mut rng = Prng::seed_from_u64(31);
        let traj = Trajectory::new(
            (0..3).map(|_| crate::gauss::std_normal_vector(2, &mut rng)).collect(),
        )
        .unwrap();
        let stacked = traj.stack();
        let lhs = flat.log_q(0, None, &stacked);
        let rhs = log_target(model.as_ref(), &traj).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn flattened_gradient_matches_finite_differences() {
        let model = fixture();
        let (flat, _) = flatten_to_path_space(model, None).unwrap();
        let mut rng = Prng::seed_from_u64(32);
        let x = crate::gauss::std_normal_vector(6, &mut rng);
        let analytic = flat.grad_log_q_x(0, None, &x);
        let fd = grad_central_diff(|v| flat.log_q(0, None, v), &x, 1e-5);
        assert!((&analytic - &fd).norm() / analytic.norm().max(1.0) < 1e-5);
    }

    #[test]
    fn lgssm_joint_prior_has_running_minimum_structure() {
        // For a random walk with variance λ, cov(x_s, x_t) = λ (min(s,t)+1) I.
        let model = fixture();
        let lambda = 0.8;
        let (_, dyns) = flatten_to_path_space(model.clone(), Some(model.as_ref())).unwrap();
        let dyns = dyns.unwrap();
        let cov = dyns.joint_cov();
        for s in 0..3usize {
            for t in 0..3usize {
                let expect = lambda * (s.min(t) + 1) as f64;
                for i in 0..2 {
                    for j in 0..2 {
                        let v = cov[(s * 2 + i, t * 2 + j)];
                        let e = if i == j { expect } else { 0.0 };
                        assert!((v - e).abs() < 1e-12, "block ({s},{t}) entry ({i},{j})");
                    }
                }
            }
        }
        assert!(dyns.joint_mean().norm() < 1e-14);
    }

    #[test]
    fn flattened_prior_sampling_matches_moments() {
        let model = fixture();
        let (flat, dyns) = flatten_to_path_space(model.clone(), Some(model.as_ref())).unwrap();
        let dyns = dyns.unwrap();
        let decomp = flat.decomposition().unwrap();
        let mut rng = Prng::seed_from_u64(33);
        let n = 50_000;
        let dim = 6;
        let mut mean = DVector::zeros(dim);
        let mut second = DMatrix::zeros(dim, dim);
        for _ in 0..n {
            let x = decomp.sample_m(0, None, &mut rng);
            mean += &x;
            second += &x * x.transpose();
        }
        mean /= n as f64;
        let cov = second / n as f64 - &mean * mean.transpose();
        for i in 0..dim {
            let se = (dyns.joint_cov()[(i, i)] / n as f64).sqrt();
            assert!((mean[i] - dyns.joint_mean()[i]).abs() < 5.0 * se);
            for j in 0..dim {
                let vii = dyns.joint_cov()[(i, i)];
                let vjj = dyns.joint_cov()[(j, j)];
                let vij = dyns.joint_cov()[(i, j)];
                let se_cov = ((vii * vjj + vij * vij) / n as f64).sqrt();
                assert!((cov[(i, j)] - vij).abs() < 5.0 * se_cov);
            }
        }
    }
}
