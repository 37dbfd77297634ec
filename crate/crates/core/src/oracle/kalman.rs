//! Kalman filter, Rauch–Tung–Striebel smoother and forward-filtering
//! backward-sampling for affine-Gaussian state-space models with identity
//! observation operators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gauss::{self, symmetrize, SpdMatrix};
use crate::model::{GaussianDynamics, Trajectory};
use crate::Prng;

/// `x_0 ~ N(b_0, C_0)`, `x_t = F_t x_{t-1} + b_t + w_t` with `w_t ~ N(0, C_t)`,
/// observed as `y_t = x_t + v_t` with `v_t ~ N(0, R_t)`.
pub struct AffineSsm {
    pub transition_mats: Vec<DMatrix<f64>>,
    pub offsets: Vec<DVector<f64>>,
    pub process_covs: Vec<DMatrix<f64>>,
    pub obs_covs: Vec<DMatrix<f64>>,
}

pub struct FilterResult {
    pub predicted_means: Vec<DVector<f64>>,
    pub predicted_covs: Vec<DMatrix<f64>>,
    pub filtered_means: Vec<DVector<f64>>,
    pub filtered_covs: Vec<DMatrix<f64>>,
    pub log_likelihood: f64,
}

pub struct SmootherResult {
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

impl AffineSsm {
    /// Extracts the affine coefficients from a dynamics object.
    pub fn from_dynamics(
        dynamics: &dyn GaussianDynamics,
        obs_covs: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let horizon = dynamics.horizon();
        if obs_covs.len() != horizon {
            return Err(Error::config("need one observation covariance per step"));
        }
        let mut transition_mats = Vec::with_capacity(horizon);
        let mut offsets = Vec::with_capacity(horizon);
        let mut process_covs = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let (f, b) = dynamics
                .affine_coeffs(t)
                .ok_or_else(|| Error::config("Kalman oracle requires affine dynamics"))?;
            transition_mats.push(f);
            offsets.push(b);
            process_covs.push(dynamics.cov(t, None));
        }
        Ok(Self { transition_mats, offsets, process_covs, obs_covs })
    }

    pub fn horizon(&self) -> usize {
        self.offsets.len()
    }

    pub fn dim(&self) -> usize {
        self.offsets[0].len()
    }

    pub fn filter(&self, ys: &[DVector<f64>]) -> Result<FilterResult> {
        let horizon = self.horizon();
        assert_eq!(ys.len(), horizon, "need one observation per step");
        let d = self.dim();
        let mut out = FilterResult {
            predicted_means: Vec::with_capacity(horizon),
            predicted_covs: Vec::with_capacity(horizon),
            filtered_means: Vec::with_capacity(horizon),
            filtered_covs: Vec::with_capacity(horizon),
            log_likelihood: 0.0,
        };
        let mut mean = DVector::zeros(d);
        let mut cov = DMatrix::zeros(d, d);
        for t in 0..horizon {
            // Predict.
            let (m_pred, p_pred) = if t == 0 {
                (self.offsets[0].clone(), self.process_covs[0].clone())
            } else {
                let f = &self.transition_mats[t];
                (f * &mean + &self.offsets[t], symmetrize(&(f * &cov * f.transpose() + &self.process_covs[t])))
            };
            out.predicted_means.push(m_pred.clone());
            out.predicted_covs.push(p_pred.clone());

            // Update with y_t = x_t + v_t.
            let innovation_cov = SpdMatrix::new(&p_pred + &self.obs_covs[t]).map_err(|_| {
                Error::Singular { t, what: "innovation covariance is not SPD".into() }
            })?;
            let innovation = &ys[t] - &m_pred;
            out.log_likelihood +=
                gauss::mvn_logpdf(&ys[t], &m_pred, &innovation_cov);
            // Gain K = P S^{-1}.
            let gain = innovation_cov.solve_mat(&p_pred.transpose()).transpose();
            mean = &m_pred + &gain * innovation;
            let eye = DMatrix::identity(d, d);
            let residual_op = &eye - &gain;
            // Joseph form keeps the covariance symmetric positive definite.
            cov = symmetrize(
                &(&residual_op * &p_pred * residual_op.transpose()
                    + &gain * &self.obs_covs[t] * gain.transpose()),
            );
            out.filtered_means.push(mean.clone());
            out.filtered_covs.push(cov.clone());
        }
        Ok(out)
    }

    pub fn smoother(&self, ys: &[DVector<f64>]) -> Result<SmootherResult> {
        let fr = self.filter(ys)?;
        let horizon = self.horizon();
        let mut means = fr.filtered_means.clone();
        let mut covs = fr.filtered_covs.clone();
        for t in (0..horizon.saturating_sub(1)).rev() {
            let gain = self.smoother_gain(&fr, t)?;
            means[t] = &fr.filtered_means[t]
                + &gain * (&means[t + 1] - &fr.predicted_means[t + 1]);
            covs[t] = symmetrize(
                &(&fr.filtered_covs[t]
                    + &gain * (&covs[t + 1] - &fr.predicted_covs[t + 1]) * gain.transpose()),
            );
        }
        Ok(SmootherResult { means, covs })
    }

    /// Draws a path from `p(x_{0..T-1} | y_{0..T-1})` by backward sampling
    /// through the filtered moments.
    pub fn ffbs(&self, ys: &[DVector<f64>], rng: &mut Prng) -> Result<Trajectory> {
        let fr = self.filter(ys)?;
        self.ffbs_from_filter(&fr, rng)
    }

    /// As [`ffbs`](Self::ffbs) but reuses a precomputed filter pass.
    pub fn ffbs_from_filter(&self, fr: &FilterResult, rng: &mut Prng) -> Result<Trajectory> {
        let horizon = self.horizon();
        let mut states = vec![DVector::zeros(self.dim()); horizon];
        let last_cov = SpdMatrix::new(fr.filtered_covs[horizon - 1].clone())
            .map_err(|_| Error::Singular { t: horizon - 1, what: "filtered covariance".into() })?;
        states[horizon - 1] = gauss::mvn_sample(&fr.filtered_means[horizon - 1], &last_cov, rng);
        for t in (0..horizon - 1).rev() {
            let gain = self.smoother_gain(fr, t)?;
            let mean = &fr.filtered_means[t]
                + &gain * (&states[t + 1] - &fr.predicted_means[t + 1]);
            let cov = symmetrize(
                &(&fr.filtered_covs[t] - &gain * &fr.predicted_covs[t + 1] * gain.transpose()),
            );
            let cov = SpdMatrix::new(cov)
                .map_err(|_| Error::Singular { t, what: "backward-sampling covariance".into() })?;
            states[t] = gauss::mvn_sample(&mean, &cov, rng);
        }
        Trajectory::new(states)
    }

    /// `J_t = Σ_{t|t} F_{t+1}ᵀ Σ_{t+1|t}^{-1}`.
    fn smoother_gain(&self, fr: &FilterResult, t: usize) -> Result<DMatrix<f64>> {
        let pred_next = SpdMatrix::new(fr.predicted_covs[t + 1].clone())
            .map_err(|_| Error::Singular { t: t + 1, what: "predicted covariance".into() })?;
        let cross = &fr.filtered_covs[t] * self.transition_mats[t + 1].transpose();
        Ok(pred_next.solve_mat(&cross.transpose()).transpose())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_lgssm, GaussianDynamics, Lgssm};
    use rand::SeedableRng;

    fn lgssm_ssm(model: &Lgssm) -> AffineSsm {
        let d = GaussianDynamics::dim(model);
        let horizon = GaussianDynamics::horizon(model);
        AffineSsm::from_dynamics(model, vec![DMatrix::identity(d, d); horizon]).unwrap()
    }

    #[test]
    fn single_step_conjugate_posterior() {
        // x ~ N(0, λ), y = x + e: posterior N(λy/(λ+1), λ/(λ+1)).
        let lambda = 0.7;
        let y = DVector::from_element(1, 1.3);
        let model = make_lgssm(1, 1, lambda, vec![y.clone()]).unwrap();
        let sm = lgssm_ssm(&model).smoother(model.observations()).unwrap();
        let expect_mean = lambda * y[0] / (lambda + 1.0);
        let expect_var = lambda / (lambda + 1.0);
        assert!((sm.means[0][0] - expect_mean).abs() < 1e-12);
        assert!((sm.covs[0][(0, 0)] - expect_var).abs() < 1e-12);
    }

    #[test]
    fn huge_observation_noise_recovers_prior_marginals() {
        let mut rng = Prng::seed_from_u64(50);
        let (_, obs) = Lgssm::simulate(2, 4, 1.0, &mut rng);
        let model = make_lgssm(2, 4, 1.0, obs).unwrap();
        let ssm = AffineSsm::from_dynamics(
            &model,
            vec![DMatrix::from_diagonal_element(2, 2, 1e12); 4],
        )
        .unwrap();
        let sm = ssm.smoother(model.observations()).unwrap();
        for t in 0..4 {
            // Prior marginal of the random walk: N(0, (t+1)λ I).
            assert!(sm.means[t].norm() < 1e-3);
            let expect = DMatrix::from_diagonal_element(2, 2, (t + 1) as f64);
            assert!((&sm.covs[t] - expect).norm() < 1e-3);
        }
    }

    #[test]
    fn ffbs_moments_match_smoother() {
        let mut rng = Prng::seed_from_u64(51);
        let (_, obs) = Lgssm::simulate(1, 3, 1.0, &mut rng);
        let model = make_lgssm(1, 3, 1.0, obs).unwrap();
        let ssm = lgssm_ssm(&model);
        let sm = ssm.smoother(model.observations()).unwrap();
        let fr = ssm.filter(model.observations()).unwrap();

        let n = 200_000;
        let mut mean = vec![0.0; 3];
        let mut second = vec![0.0; 3];
        for _ in 0..n {
            let path = ssm.ffbs_from_filter(&fr, &mut rng).unwrap();
            for t in 0..3 {
                mean[t] += path.state(t)[0];
                second[t] += path.state(t)[0] * path.state(t)[0];
            }
        }
        for t in 0..3 {
            let m = mean[t] / n as f64;
            let var = second[t] / n as f64 - m * m;
            let se_mean = (sm.covs[t][(0, 0)] / n as f64).sqrt();
            assert!((m - sm.means[t][0]).abs() < 4.0 * se_mean, "mean at t={t}");
            let se_var = sm.covs[t][(0, 0)] * (2.0 / n as f64).sqrt();
            assert!((var - sm.covs[t][(0, 0)]).abs() < 4.0 * se_var, "var at t={t}");
        }
    }
}
