//! Twisted-proposal parameters.
//!
//! The twisted strategies propose `x_t | x_{t-1}` conditionally on *all*
//! future pseudo-observations `u_{t..T-1}` of the affine-Gaussian system
//! `x_t = F_t x_{t-1} + b_t + w_t`, `u_t = x_t + e_t` with
//! `e_t ~ N(0, (δ_t/2) V_t)`. That conditional is Gaussian,
//! `N(x_t; F'_t x_{t-1} + b'_t, Σ'_t)`, and its parameters are computed once
//! per sweep in O(T·D³) by one of two routes:
//!
//! * the general route runs a Kalman filter on the *time-reversed* chain
//!   (no invertibility requirement on the process covariances), then
//!   combines each reversed-filter law with the reversed transition by one
//!   more Kalman update in which `x_{t-1}` plays the role of an observation;
//! * the invertible route runs the forward filter and RTS smoother and
//!   combines precision matrices directly. It requires invertible `C_t` and
//!   is kept both for cross-validation and for numerically awkward
//!   (explosive) prior dynamics.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gauss::{self, symmetrize, SpdMatrix};
use crate::model::GaussianDynamics;
use crate::Prng;

/// Which pseudo-observation noise shape the twisting uses: `V_t = I` for the
/// gradient-twisted kernels, `V_t = C_t` for the preconditioned family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsCovKind {
    Identity,
    PriorCov,
}

/// Per-step conditional parameters `(F'_t, b'_t, Σ'_t)`; `F'_0` is zero.
pub struct TwistedParams {
    factors: Vec<DMatrix<f64>>,
    offsets: Vec<DVector<f64>>,
    covs: Vec<SpdMatrix>,
}

impl TwistedParams {
    pub fn horizon(&self) -> usize {
        self.offsets.len()
    }

    pub fn factor(&self, t: usize) -> &DMatrix<f64> {
        &self.factors[t]
    }

    pub fn offset(&self, t: usize) -> &DVector<f64> {
        &self.offsets[t]
    }

    pub fn cov(&self, t: usize) -> &SpdMatrix {
        &self.covs[t]
    }

    pub fn cond_mean(&self, t: usize, x_prev: Option<&DVector<f64>>) -> DVector<f64> {
        match x_prev {
            Some(xp) => &self.factors[t] * xp + &self.offsets[t],
            None => self.offsets[t].clone(),
        }
    }

    pub fn logpdf(&self, t: usize, x_prev: Option<&DVector<f64>>, x: &DVector<f64>) -> f64 {
        gauss::mvn_logpdf(x, &self.cond_mean(t, x_prev), &self.covs[t])
    }

    pub fn sample(&self, t: usize, x_prev: Option<&DVector<f64>>, rng: &mut Prng) -> DVector<f64> {
        gauss::mvn_sample(&self.cond_mean(t, x_prev), &self.covs[t], rng)
    }
}

/// One Gaussian observation update of `N(mean, cov)` by an observation
/// `y = H x + d + v`, `v ~ N(0, R)`, returned in gain/offset form so the
/// same computation serves both actual updates (`mean' = offset + K y`) and
/// the construction of conditionals on a not-yet-seen `y`.
pub struct KalmanUpdate {
    pub gain: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl KalmanUpdate {
    pub fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.offset + &self.gain * y
    }
}

pub fn kalman_update(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    obs_matrix: &DMatrix<f64>,
    obs_offset: &DVector<f64>,
    obs_noise: &DMatrix<f64>,
    t: usize,
) -> Result<KalmanUpdate> {
    let innovation_cov = symmetrize(&(obs_matrix * cov * obs_matrix.transpose() + obs_noise));
    let innovation_cov = SpdMatrix::new(innovation_cov)
        .map_err(|_| Error::Singular { t, what: "innovation covariance".into() })?;
    let cross = cov * obs_matrix.transpose();
    let gain = innovation_cov.solve_mat(&cross.transpose()).transpose();
    let offset = mean - &gain * (obs_matrix * mean + obs_offset);
    // Joseph form keeps the posterior covariance symmetric PSD.
    let d = mean.len();
    let residual_op = DMatrix::identity(d, d) - &gain * obs_matrix;
    let cov_new = symmetrize(
        &(&residual_op * cov * residual_op.transpose() + &gain * obs_noise * gain.transpose()),
    );
    Ok(KalmanUpdate { gain, offset, cov: cov_new })
}

/// Prior marginal moments `(μ_t, Σ_t)` of the affine chain.
pub fn prior_marginals(
    dynamics: &dyn GaussianDynamics,
) -> Result<(Vec<DVector<f64>>, Vec<DMatrix<f64>>)> {
    let horizon = dynamics.horizon();
    let mut means = Vec::with_capacity(horizon);
    let mut covs = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let (f, b) = affine(dynamics, t)?;
        if t == 0 {
            means.push(b);
            covs.push(dynamics.cov(0, None));
        } else {
            means.push(&f * &means[t - 1] + &b);
            covs.push(symmetrize(&(&f * &covs[t - 1] * f.transpose() + dynamics.cov(t, None))));
        }
    }
    Ok((means, covs))
}

fn affine(dynamics: &dyn GaussianDynamics, t: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    dynamics
        .affine_coeffs(t)
        .ok_or_else(|| Error::config("twisted proposals require affine dynamics"))
}

fn obs_cov(
    dynamics: &dyn GaussianDynamics,
    deltas: &[f64],
    kind: ObsCovKind,
    t: usize,
) -> DMatrix<f64> {
    let half = 0.5 * deltas[t];
    match kind {
        ObsCovKind::Identity => {
            DMatrix::from_diagonal_element(dynamics.dim(), dynamics.dim(), half)
        }
        ObsCovKind::PriorCov => dynamics.cov(t, None) * half,
    }
}

/// Twisted-proposal parameters by the reversed-chain route. Does not require
/// the process covariances to be invertible.
pub fn twisted_params_general(
    dynamics: &dyn GaussianDynamics,
    deltas: &[f64],
    pseudo_obs: &[DVector<f64>],
    kind: ObsCovKind,
) -> Result<TwistedParams> {
    let horizon = dynamics.horizon();
    assert_eq!(deltas.len(), horizon);
    assert_eq!(pseudo_obs.len(), horizon);
    let (prior_means, prior_covs) = prior_marginals(dynamics)?;

    // Time-reversed transitions p(x_t | x_{t+1}) = N(J_t x_{t+1} + c_t, R_t).
    let mut rev_factors = Vec::with_capacity(horizon.saturating_sub(1));
    let mut rev_offsets = Vec::with_capacity(horizon.saturating_sub(1));
    let mut rev_covs = Vec::with_capacity(horizon.saturating_sub(1));
    for t in 0..horizon.saturating_sub(1) {
        let (f_next, _) = affine(dynamics, t + 1)?;
        let next_cov = SpdMatrix::new(prior_covs[t + 1].clone())
            .map_err(|_| Error::Singular { t: t + 1, what: "prior marginal covariance".into() })?;
        let cross = &prior_covs[t] * f_next.transpose();
        let gain = next_cov.solve_mat(&cross.transpose()).transpose();
        rev_offsets.push(&prior_means[t] - &gain * &prior_means[t + 1]);
        rev_covs.push(symmetrize(
            &(&prior_covs[t] - &gain * prior_covs[t + 1].clone() * gain.transpose()),
        ));
        rev_factors.push(gain);
    }

    // Kalman filter along the reversed chain, initialised at the final
    // prior marginal.
    let dim = dynamics.dim();
    let mut filt_means = vec![DVector::zeros(dim); horizon];
    let mut filt_covs = vec![DMatrix::zeros(dim, dim); horizon];
    for t in (0..horizon).rev() {
        let (pred_mean, pred_cov) = if t == horizon - 1 {
            (prior_means[t].clone(), prior_covs[t].clone())
        } else {
            (
                &rev_factors[t] * &filt_means[t + 1] + &rev_offsets[t],
                symmetrize(
                    &(&rev_factors[t] * filt_covs[t + 1].clone() * rev_factors[t].transpose()
                        + &rev_covs[t]),
                ),
            )
        };
        let eye = DMatrix::identity(dim, dim);
        let zero = DVector::zeros(dim);
        let noise = obs_cov(dynamics, deltas, kind, t);
        let update = kalman_update(&pred_mean, &pred_cov, &eye, &zero, &noise, t)?;
        filt_means[t] = update.apply(&pseudo_obs[t]);
        filt_covs[t] = update.cov;
    }

    // Combine: condition each reversed-filter law on x_{t-1}, which enters
    // through the reversed transition as a pseudo observation of x_t.
    let mut factors = Vec::with_capacity(horizon);
    let mut offsets = Vec::with_capacity(horizon);
    let mut covs = Vec::with_capacity(horizon);
    factors.push(DMatrix::zeros(dim, dim));
    offsets.push(filt_means[0].clone());
    covs.push(
        SpdMatrix::new(filt_covs[0].clone())
            .map_err(|_| Error::Singular { t: 0, what: "twisted proposal covariance".into() })?,
    );
    for t in 1..horizon {
        let update = kalman_update(
            &filt_means[t],
            &filt_covs[t],
            &rev_factors[t - 1],
            &rev_offsets[t - 1],
            &rev_covs[t - 1],
            t,
        )?;
        offsets.push(update.offset);
        covs.push(
            SpdMatrix::new(update.cov)
                .map_err(|_| Error::Singular { t, what: "twisted proposal covariance".into() })?,
        );
        factors.push(update.gain);
    }
    Ok(TwistedParams { factors, offsets, covs })
}

/// Twisted-proposal parameters by the forward-filter / RTS-smoother route;
/// requires every `C_t` to be invertible.
pub fn twisted_params_invertible(
    dynamics: &dyn GaussianDynamics,
    deltas: &[f64],
    pseudo_obs: &[DVector<f64>],
    kind: ObsCovKind,
) -> Result<TwistedParams> {
    let horizon = dynamics.horizon();
    assert_eq!(deltas.len(), horizon);
    assert_eq!(pseudo_obs.len(), horizon);
    let d = dynamics.dim();

    // Forward filter with observations u_t.
    let mut pred_means = Vec::with_capacity(horizon);
    let mut pred_covs = Vec::with_capacity(horizon);
    let mut filt_means: Vec<DVector<f64>> = Vec::with_capacity(horizon);
    let mut filt_covs: Vec<DMatrix<f64>> = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let (f, b) = affine(dynamics, t)?;
        let (pm, pc) = if t == 0 {
            (b, dynamics.cov(0, None))
        } else {
            (
                &f * &filt_means[t - 1] + &b,
                symmetrize(
                    &(&f * filt_covs[t - 1].clone() * f.transpose() + dynamics.cov(t, None)),
                ),
            )
        };
        let eye = DMatrix::identity(d, d);
        let zero = DVector::zeros(d);
        let noise = obs_cov(dynamics, deltas, kind, t);
        let update = kalman_update(&pm, &pc, &eye, &zero, &noise, t)?;
        filt_means.push(update.apply(&pseudo_obs[t]));
        filt_covs.push(update.cov);
        pred_means.push(pm);
        pred_covs.push(pc);
    }

    // RTS smoother.
    let mut smooth_means = filt_means.clone();
    let mut smooth_covs = filt_covs.clone();
    for t in (0..horizon.saturating_sub(1)).rev() {
        let (f_next, _) = affine(dynamics, t + 1)?;
        let pred_next = SpdMatrix::new(pred_covs[t + 1].clone())
            .map_err(|_| Error::Singular { t: t + 1, what: "predicted covariance".into() })?;
        let cross = &filt_covs[t] * f_next.transpose();
        let gain = pred_next.solve_mat(&cross.transpose()).transpose();
        smooth_means[t] = &filt_means[t] + &gain * (&smooth_means[t + 1] - &pred_means[t + 1]);
        smooth_covs[t] = symmetrize(
            &(&filt_covs[t]
                + &gain * (smooth_covs[t + 1].clone() - &pred_covs[t + 1]) * gain.transpose()),
        );
    }

    // Combine precisions: Σ'_t = [C_t^{-1} + Σ_{t|T}^{-1} - Σ_{t|t-1}^{-1}]^{-1},
    // with the mean terms combined the same way; precision differences are
    // symmetrised before factorising.
    let mut factors = Vec::with_capacity(horizon);
    let mut offsets = Vec::with_capacity(horizon);
    let mut covs = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let (f, b) = affine(dynamics, t)?;
        let c_inv = SpdMatrix::new(dynamics.cov(t, None))
            .map_err(|_| Error::config("invertible route requires invertible C_t"))?
            .inverse();
        let smooth_prec = SpdMatrix::new(smooth_covs[t].clone())
            .map_err(|_| Error::Singular { t, what: "smoothed covariance".into() })?
            .inverse();
        let pred_prec = SpdMatrix::new(pred_covs[t].clone())
            .map_err(|_| Error::Singular { t, what: "predicted covariance".into() })?
            .inverse();
        let prec = symmetrize(&(&c_inv + &smooth_prec - &pred_prec));
        let prec = SpdMatrix::new(prec)
            .map_err(|_| Error::Singular { t, what: "twisted proposal precision".into() })?;
        let cov = SpdMatrix::new(symmetrize(&prec.inverse()))
            .map_err(|_| Error::Singular { t, what: "twisted proposal covariance".into() })?;
        let lin = &c_inv * &b + &smooth_prec * &smooth_means[t] - &pred_prec * &pred_means[t];
        offsets.push(cov.dense() * lin);
        factors.push(cov.dense() * &c_inv * &f);
        covs.push(cov);
    }
    Ok(TwistedParams { factors, offsets, covs })
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    /// Generic affine dynamics fixture with random parameters.
    pub struct RandomAffine {
        pub fs: Vec<DMatrix<f64>>,
        pub bs: Vec<DVector<f64>>,
        pub cs: Vec<DMatrix<f64>>,
    }

    impl RandomAffine {
        pub fn draw(horizon: usize, dim: usize, rng: &mut Prng) -> Self {
            let mut fs = Vec::new();
            let mut bs = Vec::new();
            let mut cs = Vec::new();
            for t in 0..horizon {
                let f = if t == 0 {
                    DMatrix::zeros(dim, dim)
                } else {
                    DMatrix::from_fn(dim, dim, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal))
                };
                let b = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                let m = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                let c = &m * m.transpose() + DMatrix::from_diagonal_element(dim, dim, 0.4);
                fs.push(f);
                bs.push(b);
                cs.push(symmetrize(&c));
            }
            Self { fs, bs, cs }
        }
    }

    impl GaussianDynamics for RandomAffine {
        fn horizon(&self) -> usize {
            self.bs.len()
        }
        fn dim(&self) -> usize {
            self.bs[0].len()
        }
        fn mean(&self, t: usize, x_prev: Option<&DVector<f64>>) -> DVector<f64> {
            match x_prev {
                Some(xp) => &self.fs[t] * xp + &self.bs[t],
                None => self.bs[t].clone(),
            }
        }
        fn cov(&self, t: usize, _x_prev: Option<&DVector<f64>>) -> DMatrix<f64> {
            self.cs[t].clone()
        }
        fn constant_cov(&self) -> bool {
            true
        }
        fn affine_coeffs(&self, t: usize) -> Option<(DMatrix<f64>, DVector<f64>)> {
            Some((self.fs[t].clone(), self.bs[t].clone()))
        }
    }
}
