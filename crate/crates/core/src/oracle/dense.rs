//! Dense joint-Gaussian construction and conditioning.
//!
//! The joint law over the stacked states and pseudo-observations is built by
//! square-root composition: the stacked vector is written as an affine map of
//! independent standard normals, accumulated row-block by row-block, and the
//! covariance is recovered as `L Lᵀ`. This construction is deliberately
//! different from the block-recursion used elsewhere so the two can
//! cross-validate each other.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gauss::{symmetrize, SpdMatrix};
use crate::model::GaussianDynamics;

/// A mean vector and covariance matrix with exact conditioning.
#[derive(Debug, Clone)]
pub struct DenseGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl DenseGaussian {
    /// Conditions on `z[indices] = values`, returning the law of the
    /// remaining coordinates (in their original order).
    pub fn condition(&self, indices: &[usize], values: &DVector<f64>) -> Result<DenseGaussian> {
        assert_eq!(indices.len(), values.len());
        let n = self.mean.len();
        let mut observed = vec![false; n];
        for &i in indices {
            observed[i] = true;
        }
        let kept: Vec<usize> = (0..n).filter(|i| !observed[*i]).collect();

        let cov_oo = DMatrix::from_fn(indices.len(), indices.len(), |r, c| {
            self.cov[(indices[r], indices[c])]
        });
        let cov_ko =
            DMatrix::from_fn(kept.len(), indices.len(), |r, c| self.cov[(kept[r], indices[c])]);
        let cov_kk =
            DMatrix::from_fn(kept.len(), kept.len(), |r, c| self.cov[(kept[r], kept[c])]);
        let mean_o = DVector::from_fn(indices.len(), |r, _| self.mean[indices[r]]);
        let mean_k = DVector::from_fn(kept.len(), |r, _| self.mean[kept[r]]);

        let chol = SpdMatrix::new(cov_oo)
            .map_err(|_| Error::Singular { t: 0, what: "observed block is not SPD".into() })?;
        let gain = chol.solve_mat(&cov_ko.transpose()).transpose();
        let mean = &mean_k + &gain * (values - mean_o);
        let cov = symmetrize(&(cov_kk - &gain * cov_ko.transpose()));
        Ok(DenseGaussian { mean, cov })
    }

    pub fn logpdf(&self, x: &DVector<f64>) -> Result<f64> {
        let spd = SpdMatrix::new(self.cov.clone())
            .map_err(|_| Error::Singular { t: 0, what: "covariance is not SPD".into() })?;
        Ok(crate::gauss::mvn_logpdf(x, &self.mean, &spd))
    }
}

/// Joint law of the stacked latent path `x_{0..T-1}` under affine dynamics.
pub fn joint_prior_moments(dynamics: &dyn GaussianDynamics) -> Result<DenseGaussian> {
    let (mean, root) = path_square_root(dynamics)?;
    Ok(DenseGaussian { mean, cov: symmetrize(&(&root * root.transpose())) })
}

/// Joint law of `(x_{0..T-1}, u_{0..T-1})` where `u_t = x_t + e_t` with
/// `e_t ~ N(0, obs_covs[t])`, stacked as all states then all
/// pseudo-observations.
pub fn joint_xu_moments(
    dynamics: &dyn GaussianDynamics,
    obs_covs: &[DMatrix<f64>],
) -> Result<DenseGaussian> {
    let horizon = dynamics.horizon();
    let d = dynamics.dim();
    assert_eq!(obs_covs.len(), horizon);
    let (x_mean, x_root) = path_square_root(dynamics)?;

    let total = 2 * horizon * d;
    let noise_dims = x_root.ncols() + horizon * d;
    let mut mean = DVector::zeros(total);
    let mut root = DMatrix::zeros(total, noise_dims);
    mean.rows_mut(0, horizon * d).copy_from(&x_mean);
    root.view_mut((0, 0), (horizon * d, x_root.ncols())).copy_from(&x_root);
    for t in 0..horizon {
        let row = horizon * d + t * d;
        // u_t = x_t + chol(R_t) ε_t.
        mean.rows_mut(row, d).copy_from(&x_mean.rows(t * d, d));
        let x_rows = x_root.rows(t * d, d).clone_owned();
        root.view_mut((row, 0), (d, x_root.ncols())).copy_from(&x_rows);
        let r_chol = SpdMatrix::new(obs_covs[t].clone())
            .map_err(|_| Error::Singular { t, what: "observation covariance".into() })?;
        root.view_mut((row, x_root.ncols() + t * d), (d, d))
            .copy_from(&r_chol.cholesky().l_dirty().lower_triangle());
    }
    Ok(DenseGaussian { mean, cov: symmetrize(&(&root * root.transpose())) })
}

/// Writes the stacked path as `mean + root · ε` with `ε` standard normal.
fn path_square_root(dynamics: &dyn GaussianDynamics) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let horizon = dynamics.horizon();
    let d = dynamics.dim();
    if !dynamics.constant_cov() {
        return Err(Error::config("dense joint prior requires constant covariances"));
    }
    let mut mean = DVector::zeros(horizon * d);
    let mut root = DMatrix::zeros(horizon * d, horizon * d);
    let mut prev_mean = DVector::zeros(d);
    for t in 0..horizon {
        let (f, b) = dynamics
            .affine_coeffs(t)
            .ok_or_else(|| Error::config("dense joint prior requires affine dynamics"))?;
        let mu_t = if t == 0 { b } else { &f * &prev_mean + &b };
        mean.rows_mut(t * d, d).copy_from(&mu_t);
        prev_mean = mu_t;

        if t > 0 {
            // Propagate the existing noise dependence through F_t.
            let prev_rows = root.rows((t - 1) * d, d).clone_owned();
            let propagated = &f * prev_rows;
            root.view_mut((t * d, 0), (d, horizon * d)).copy_from(&propagated);
        }
        let c_chol = SpdMatrix::new(dynamics.cov(t, None))
            .map_err(|_| Error::Singular { t, what: "process covariance".into() })?;
        root.view_mut((t * d, t * d), (d, d))
            .copy_from(&c_chol.cholesky().l_dirty().lower_triangle());
    }
    Ok((mean, root))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss;
    use crate::model::{make_lgssm, Lgssm};
    use crate::oracle::AffineSsm;
    use crate::Prng;
    use rand::SeedableRng;

    #[test]
    fn joint_prior_matches_monte_carlo() {
        let model = make_lgssm(2, 3, 0.9, vec![DVector::zeros(2); 3]).unwrap();
        let joint = joint_prior_moments(&model).unwrap();
        let mut rng = Prng::seed_from_u64(60);
        let n = 200_000usize;
        let dim = 6;
        let mut mean = DVector::zeros(dim);
        let mut second = DMatrix::zeros(dim, dim);
        let decomp = crate::model::FeynmanKac::decomposition(&model).unwrap();
        for _ in 0..n {
            let mut states: Vec<DVector<f64>> = Vec::with_capacity(3);
            for t in 0..3 {
                let prev = (t > 0).then(|| &states[t - 1]);
                states.push(decomp.sample_m(t, prev, &mut rng));
            }
            let stacked = crate::model::Trajectory::new(states).unwrap().stack();
            mean += &stacked;
            second += &stacked * stacked.transpose();
        }
        mean /= n as f64;
        let cov = second / n as f64 - &mean * mean.transpose();
        for i in 0..dim {
            for j in 0..dim {
                let vii = joint.cov[(i, i)];
                let vjj = joint.cov[(j, j)];
                let vij = joint.cov[(i, j)];
                let se = ((vii * vjj + vij * vij) / n as f64).sqrt();
                assert!((cov[(i, j)] - vij).abs() < 4.0 * se, "cov ({i},{j})");
            }
        }
    }

    #[test]
    fn joint_cov_is_symmetric() {
        let model = make_lgssm(2, 4, 1.3, vec![DVector::zeros(2); 4]).unwrap();
        let joint =
            joint_xu_moments(&model, &vec![DMatrix::identity(2, 2); 4]).unwrap();
        assert!((&joint.cov - joint.cov.transpose()).norm() < 1e-12);
    }

    #[test]
    fn conditioning_matches_kalman_smoother() {
        // p(x_t | u_{0..T-1}) from dense conditioning vs the RTS smoother.
        let mut rng = Prng::seed_from_u64(61);
        let (_, obs) = Lgssm::simulate(2, 4, 1.1, &mut rng);
        let model = make_lgssm(2, 4, 1.1, obs.clone()).unwrap();
        let obs_covs = vec![DMatrix::identity(2, 2); 4];
        let joint = joint_xu_moments(&model, &obs_covs).unwrap();

        let d = 2;
        let horizon = 4;
        let u_indices: Vec<usize> = (horizon * d..2 * horizon * d).collect();
        let mut u_vals = DVector::zeros(horizon * d);
        for t in 0..horizon {
            u_vals.rows_mut(t * d, d).copy_from(&obs[t]);
        }
        let cond = joint.condition(&u_indices, &u_vals).unwrap();

        let ssm = AffineSsm::from_dynamics(&model, obs_covs).unwrap();
        let sm = ssm.smoother(&obs).unwrap();
        for t in 0..horizon {
            let mean_t = cond.mean.rows(t * d, d).clone_owned();
            assert!((&mean_t - &sm.means[t]).norm() < 1e-9, "mean at t={t}");
            let cov_t = DMatrix::from_fn(d, d, |i, j| cond.cov[(t * d + i, t * d + j)]);
            assert!((&cov_t - &sm.covs[t]).norm() < 1e-9, "cov at t={t}");
        }
    }

    #[test]
    fn conditioning_recovers_exact_values_in_degenerate_direction() {
        // Conditioning a 2D correlated Gaussian on one coordinate.
        let g = DenseGaussian {
            mean: DVector::from_vec(vec![1.0, -1.0]),
            cov: DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 0.5]),
        };
        let cond = g.condition(&[1], &DVector::from_element(1, 0.0)).unwrap();
        // Standard formulas: mean = μ0 + Σ01 Σ11^{-1} (v - μ1).
        let expect_mean = 1.0 + 0.6 / 0.5 * (0.0 + 1.0);
        let expect_var = 2.0 - 0.6 * 0.6 / 0.5;
        assert!((cond.mean[0] - expect_mean).abs() < 1e-12);
        assert!((cond.cov[(0, 0)] - expect_var).abs() < 1e-12);
    }

    #[test]
    fn logpdf_matches_direct_formula() {
        let g = DenseGaussian {
            mean: DVector::from_vec(vec![0.3, -0.2]),
            cov: DMatrix::from_row_slice(2, 2, &[1.5, 0.4, 0.4, 0.9]),
        };
        let x = DVector::from_vec(vec![0.1, 0.2]);
        let inv = g.cov.clone().try_inverse().unwrap();
        let diff = &x - &g.mean;
        let expect = -0.5
            * (2.0 * gauss::LN_2PI + g.cov.determinant().ln() + diff.dot(&(&inv * &diff)));
        assert!((g.logpdf(&x).unwrap() - expect).abs() < 1e-12);
    }
}
