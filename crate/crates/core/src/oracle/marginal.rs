//! Exact marginal-proposal densities, materialised as dense `ND × ND`
//! Gaussians.
//!
//! The marginal algorithms weight particle `n` by the conditional density of
//! the other `N` particles given that the reference occupies slot `n`, with
//! the shared auxiliary variable integrated out:
//!
//! ```text
//! q_{-n}(x_{-n} | x_n) = N(x_{-n}; v_{-n} + H_{-n}(x_n + φ_n),
//!                          D_{-n} + H_{-n} E H_{-n}ᵀ)
//! ```
//!
//! where slot `m ≠ n` is proposed as `x_m ~ N(v_m + H_m u, D_m)` from the
//! auxiliary variable `u ~ N(x_n + φ_n, E)`. Building this density explicitly
//! is the ground truth for every O(N) weight factor.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::oracle::DenseGaussian;

/// Per-slot proposal pieces for one time step.
pub struct MarginalProposalSpec {
    /// Per-slot offsets `v_m` (typically a function of slot `m`'s ancestor).
    pub offsets: Vec<DVector<f64>>,
    /// Per-slot factors `H_m` applied to the auxiliary variable.
    pub factors: Vec<DMatrix<f64>>,
    /// Per-slot conditional covariances `D_m`.
    pub cond_covs: Vec<DMatrix<f64>>,
    /// Auxiliary covariance `E`.
    pub aux_cov: DMatrix<f64>,
    /// Per-slot gradient shifts `φ_n` entering the auxiliary mean when the
    /// reference occupies slot `n`.
    pub shifts: Vec<DVector<f64>>,
}

impl MarginalProposalSpec {
    pub fn slots(&self) -> usize {
        self.offsets.len()
    }

    pub fn dim(&self) -> usize {
        self.aux_cov.nrows()
    }

    /// The dense law of `x_{-n}` given the reference at slot `n`.
    pub fn marginal_law(&self, n: usize, x_n: &DVector<f64>) -> DenseGaussian {
        let d = self.dim();
        let others: Vec<usize> = (0..self.slots()).filter(|m| *m != n).collect();
        let count = others.len();
        let shifted = x_n + &self.shifts[n];

        let mut mean = DVector::zeros(count * d);
        let mut stacked_factors = DMatrix::zeros(count * d, d);
        let mut cov = DMatrix::zeros(count * d, count * d);
        for (row, &m) in others.iter().enumerate() {
            mean.rows_mut(row * d, d)
                .copy_from(&(&self.offsets[m] + &self.factors[m] * &shifted));
            stacked_factors.view_mut((row * d, 0), (d, d)).copy_from(&self.factors[m]);
            cov.view_mut((row * d, row * d), (d, d)).copy_from(&self.cond_covs[m]);
        }
        cov += &stacked_factors * &self.aux_cov * stacked_factors.transpose();
        DenseGaussian { mean, cov }
    }
}

/// `log q_{-n}(x_{-n} | x_n)`: the exact marginal-proposal log-density of
/// the non-reference particles, with the reference at slot `n`.
pub fn exact_marginal_proposal_logpdf(
    spec: &MarginalProposalSpec,
    n: usize,
    particles: &[DVector<f64>],
) -> Result<f64> {
    assert_eq!(particles.len(), spec.slots(), "one particle per slot");
    let d = spec.dim();
    let law = spec.marginal_law(n, &particles[n]);
    let others: Vec<usize> = (0..spec.slots()).filter(|m| *m != n).collect();
    let mut stacked = DVector::zeros(others.len() * d);
    for (row, &m) in others.iter().enumerate() {
        stacked.rows_mut(row * d, d).copy_from(&particles[m]);
    }
    law.logpdf(&stacked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::{self, block_inv_params, block_matrix, symmetrize, SpdMatrix};
    use crate::Prng;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn random_spd(d: usize, scale: f64, rng: &mut Prng) -> DMatrix<f64> {
        let m = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        &m * m.transpose() * scale + DMatrix::from_diagonal_element(d, d, 0.3)
    }

    fn random_vec(d: usize, rng: &mut Prng) -> DVector<f64> {
        DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    /// Spec with shared (H, D) across slots, as in the marginal algorithms.
    fn shared_spec(n_slots: usize, d: usize, rng: &mut Prng) -> MarginalProposalSpec {
        let h = {
            let m = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            symmetrize(&m).scale(0.4) + DMatrix::from_diagonal_element(d, d, 0.6)
        };
        let cond = random_spd(d, 0.2, rng);
        MarginalProposalSpec {
            offsets: (0..n_slots).map(|_| random_vec(d, rng)).collect(),
            factors: vec![h; n_slots],
            cond_covs: vec![cond; n_slots],
            aux_cov: random_spd(d, 0.3, rng),
            shifts: (0..n_slots).map(|_| random_vec(d, rng)).collect(),
        }
    }

    #[test]
    fn single_extra_slot_reduces_to_one_gaussian() {
        let mut rng = Prng::seed_from_u64(70);
        let spec = shared_spec(2, 2, &mut rng);
        let particles = vec![random_vec(2, &mut rng), random_vec(2, &mut rng)];
        let lp = exact_marginal_proposal_logpdf(&spec, 0, &particles).unwrap();

        // Direct single-Gaussian computation.
        let mean = &spec.offsets[1] + &spec.factors[1] * (&particles[0] + &spec.shifts[0]);
        let cov = &spec.cond_covs[1]
            + &spec.factors[1] * &spec.aux_cov * spec.factors[1].transpose();
        let direct =
            gauss::mvn_logpdf(&particles[1], &mean, &SpdMatrix::new(symmetrize(&cov)).unwrap());
        assert!((lp - direct).abs() < 1e-10);
    }

    #[test]
    fn covariance_agrees_with_block_inverse_formulas() {
        // With shared (H, D): Σ_{-n} = M_N(D, H E Hᵀ); check the closed-form
        // block inverse against the dense inverse of the assembled law.
        let mut rng = Prng::seed_from_u64(71);
        for _ in 0..20 {
            let d = 2;
            let n_slots = 4;
            let spec = shared_spec(n_slots, d, &mut rng);
            let x_n = random_vec(d, &mut rng);
            let law = spec.marginal_law(0, &x_n);

            let heh = &spec.factors[1] * &spec.aux_cov * spec.factors[1].transpose();
            let (f, g) = block_inv_params(&spec.cond_covs[1], &heh, n_slots - 1).unwrap();
            let inv_block = block_matrix(&f, &g, n_slots - 1);
            let dense_inv = law.cov.clone().try_inverse().unwrap();
            assert!((inv_block - dense_inv).norm() < 1e-8);
        }
    }

    #[test]
    fn permutation_invariant_factor_cancels_in_ratios() {
        // q_{-n}/q_{-m} must equal H_n/H_m, i.e. log q_{-n} - log H-part is
        // constant across n. Verified here indirectly: recomputing the law
        // with slots relabelled leaves pairwise ratios unchanged.
        let mut rng = Prng::seed_from_u64(72);
        let spec = shared_spec(3, 2, &mut rng);
        let particles: Vec<_> = (0..3).map(|_| random_vec(2, &mut rng)).collect();
        let lp: Vec<f64> = (0..3)
            .map(|n| exact_marginal_proposal_logpdf(&spec, n, &particles).unwrap())
            .collect();

        // Swap slots 1 and 2 everywhere; ratios of the relabelled density
        // must match the originals.
        let swapped = MarginalProposalSpec {
            offsets: vec![spec.offsets[0].clone(), spec.offsets[2].clone(), spec.offsets[1].clone()],
            factors: spec.factors.clone(),
            cond_covs: spec.cond_covs.clone(),
            aux_cov: spec.aux_cov.clone(),
            shifts: vec![spec.shifts[0].clone(), spec.shifts[2].clone(), spec.shifts[1].clone()],
        };
        let perm_particles =
            vec![particles[0].clone(), particles[2].clone(), particles[1].clone()];
        let lp_swapped: Vec<f64> = (0..3)
            .map(|n| exact_marginal_proposal_logpdf(&swapped, n, &perm_particles).unwrap())
            .collect();
        assert!(((lp[1] - lp[2]) - (lp_swapped[2] - lp_swapped[1])).abs() < 1e-10);
        assert!(((lp[0] - lp[1]) - (lp_swapped[0] - lp_swapped[2])).abs() < 1e-10);
    }
}
