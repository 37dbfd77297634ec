//! Dense Gaussian and structured-matrix kernels.
//!
//! Provides the building blocks shared by the proposal strategies: a
//! validated symmetric-positive-definite matrix type with a cached Cholesky
//! factor, a spectral (eigen) cache that lets gain matrices be recomputed in
//! O(D^2) when the step size changes, closed forms for the determinant and
//! inverse of the block matrix `I_N ⊗ A + 1_{N×N} ⊗ B`, and multivariate
//! normal sampling / log-density evaluation.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.8378770664093453;

/// Maximum relative asymmetry tolerated before a matrix is rejected.
const SYMMETRY_TOL: f64 = 1e-12;

/// A symmetric positive-definite matrix with a cached Cholesky factor.
///
/// Inputs are symmetrised as `(M + M^T)/2` on construction to absorb
/// rounding-level asymmetry; anything asymmetric beyond `1e-12` (relative to
/// the largest entry) is rejected, as is any matrix whose Cholesky
/// factorisation fails.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    dim: usize,
    dense: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl SpdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let dim = m.nrows();
        if m.ncols() != dim || dim == 0 {
            return Err(Error::config("SPD matrix must be square and non-empty"));
        }
        let scale = m.iter().fold(0.0f64, |a, &x| a.max(x.abs())).max(1.0);
        let mut max_asym = 0.0f64;
        for i in 0..dim {
            for j in (i + 1)..dim {
                max_asym = max_asym.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        if max_asym > SYMMETRY_TOL * scale {
            return Err(Error::config(format!(
                "matrix is not symmetric (max asymmetry {max_asym:.3e})"
            )));
        }
        let dense = symmetrize(&m);
        let chol = dense
            .clone()
            .cholesky()
            .ok_or_else(|| Error::config("matrix is not positive definite"))?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self { dim, dense, chol, log_det })
    }

    /// Isotropic matrix `v * I`.
    pub fn isotropic(dim: usize, v: f64) -> Result<Self> {
        if v <= 0.0 {
            return Err(Error::config("isotropic variance must be positive"));
        }
        Self::new(DMatrix::from_diagonal_element(dim, dim, v))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dense(&self) -> &DMatrix<f64> {
        &self.dense
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    /// Solves `self * x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// Solves `self * X = B` column-wise.
    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `x^T self^{-1} x`.
    pub fn inv_quad(&self, x: &DVector<f64>) -> f64 {
        x.dot(&self.chol.solve(x))
    }

    /// Dense inverse (used by oracles and small precomputations).
    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

/// Eigendecomposition of a fixed covariance matrix `C = U diag(λ) U^T`.
///
/// Caching `U` and `λ` once lets all step-size-dependent quantities (gain
/// matrices, proposal covariances and their square roots) be refreshed in
/// O(D^2) when the step size changes instead of O(D^3).
#[derive(Debug, Clone)]
pub struct SpectralCache {
    vectors: DMatrix<f64>,
    values: DVector<f64>,
}

impl SpectralCache {
    pub fn new(c: &SpdMatrix) -> Self {
        let eig = SymmetricEigen::new(c.dense().clone());
        Self { vectors: eig.eigenvectors, values: eig.eigenvalues }
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Rotates a vector into the eigenbasis (`U^T v`).
    pub fn to_basis(&self, v: &DVector<f64>) -> DVector<f64> {
        self.vectors.tr_mul(v)
    }

    /// Rotates a vector back from the eigenbasis (`U w`).
    pub fn from_basis(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.vectors * w
    }

    /// Reconstructs `U diag(f(λ)) U^T` as a dense matrix.
    pub fn reconstruct(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let d = self.dim();
        let mut scaled = self.vectors.clone();
        for j in 0..d {
            let s = f(self.values[j]);
            scaled.column_mut(j).scale_mut(s);
        }
        let m = &scaled * self.vectors.transpose();
        symmetrize(&m)
    }

    /// Gain eigenvalues `2λ_d / (2λ_d + δ)` for the given step size.
    pub fn gain_eigenvalues(&self, delta: f64) -> DVector<f64> {
        self.values.map(|l| 2.0 * l / (2.0 * l + delta))
    }
}

/// Determinant of the block matrix `M_N(A, B) = I_N ⊗ A + 1_{N×N} ⊗ B`,
/// computed as `det(A)^{N-1} det(A + N B)`.
pub fn block_det(a: &DMatrix<f64>, b: &DMatrix<f64>, n: usize) -> f64 {
    assert!(n >= 1, "block count must be positive");
    let a_nb = a + b.scale(n as f64);
    a.determinant().powi(n as i32 - 1) * a_nb.determinant()
}

/// Parameters `(F, G)` such that `M_N(A, B)^{-1} = M_N(F, G)`, namely
/// `F = A^{-1}` and `G = -(A + N B)^{-1} B A^{-1}`.
pub fn block_inv_params(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    n: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    assert!(n >= 1, "block count must be positive");
    let a_inv = a
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular { t: 0, what: "block A is singular".into() })?;
    let a_nb = a + b.scale(n as f64);
    let a_nb_inv = a_nb
        .try_inverse()
        .ok_or_else(|| Error::Singular { t: 0, what: "block A + N B is singular".into() })?;
    let g = -(&a_nb_inv * b * &a_inv);
    Ok((a_inv, g))
}

/// Materialises `M_N(A, B)` as a dense `(ND × ND)` matrix.
pub fn block_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let d = a.nrows();
    let mut m = DMatrix::zeros(n * d, n * d);
    for bi in 0..n {
        for bj in 0..n {
            let mut view = m.view_mut((bi * d, bj * d), (d, d));
            view.copy_from(b);
            if bi == bj {
                view += a;
            }
        }
    }
    m
}

/// Gain matrix `A = (C + (δ/2) I)^{-1} C`.
///
/// With a [`SpectralCache`] for `C`, the result is assembled from the cached
/// eigenvectors as `U diag(2λ/(2λ+δ)) U^T`; otherwise a direct Cholesky
/// solve is used. Both paths return a symmetrised matrix whose eigenvalues
/// lie in (0, 1).
pub fn gain_matrix(c: &SpdMatrix, delta: f64, spectral: Option<&SpectralCache>) -> DMatrix<f64> {
    assert!(delta > 0.0, "step size must be positive");
    if let Some(cache) = spectral {
        return cache.reconstruct(|l| 2.0 * l / (2.0 * l + delta));
    }
    let d = c.dim();
    let shifted = c.dense() + DMatrix::from_diagonal_element(d, d, 0.5 * delta);
    // C + δ/2 I is SPD for any SPD C, so the factorisation cannot fail.
    let chol = shifted.cholesky().expect("C + (δ/2) I must be positive definite");
    symmetrize(&chol.solve(c.dense()))
}

/// Marginal proposal covariance `B = (δ/2)(A^2 + A)` of a non-reference
/// particle, for a gain matrix `A` built with the same step size.
///
/// This is the covariance obtained by pushing the auxiliary noise `(δ/2) I`
/// through `A` and adding the conditional covariance `(δ/2) A`. Note: it is
/// the composition rule consistent with the Gaussian-marginal lemma and with
/// the limits `B → δ I` as `A → I` and `B → C` as `A → 0`; the result is
/// returned dense because it degenerates to zero in the `A → 0` limit.
pub fn marginal_proposal_cov(a: &DMatrix<f64>, delta: f64) -> DMatrix<f64> {
    assert!(delta > 0.0, "step size must be positive");
    symmetrize(&((a * a + a).scale(0.5 * delta)))
}

/// Log-density of `N(x; mean, cov)`.
pub fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &SpdMatrix) -> f64 {
    let diff = x - mean;
    -0.5 * (cov.dim() as f64 * LN_2PI + cov.log_det() + cov.inv_quad(&diff))
}

/// Draws from `N(mean, cov)` via the cached Cholesky factor.
pub fn mvn_sample<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &SpdMatrix,
    rng: &mut R,
) -> DVector<f64> {
    let z = std_normal_vector(cov.dim(), rng);
    mean + cov.cholesky().l_dirty().lower_triangle() * z
}

/// Log-density of `N(x; mean, scale·cov)` for a cached factorisation of
/// `cov`.
pub fn scaled_mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &SpdMatrix, scale: f64) -> f64 {
    let diff = x - mean;
    let d = cov.dim() as f64;
    -0.5 * (d * (LN_2PI + scale.ln()) + cov.log_det() + cov.inv_quad(&diff) / scale)
}

/// Draws from `N(mean, scale·cov)` reusing the cached factorisation of `cov`.
pub fn scaled_mvn_sample<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &SpdMatrix,
    scale: f64,
    rng: &mut R,
) -> DVector<f64> {
    let z = std_normal_vector(cov.dim(), rng);
    mean + cov.cholesky().l_dirty().lower_triangle() * z * scale.sqrt()
}

/// Log-density of an isotropic Gaussian `N(x; mean, var·I)`.
pub fn iso_logpdf(x: &DVector<f64>, mean: &DVector<f64>, var: f64) -> f64 {
    let d = x.len() as f64;
    let mut quad = 0.0;
    for i in 0..x.len() {
        let r = x[i] - mean[i];
        quad += r * r;
    }
    -0.5 * (d * (LN_2PI + var.ln()) + quad / var)
}

/// Vector of `dim` independent standard normals.
pub fn std_normal_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample(StandardNormal))
}
