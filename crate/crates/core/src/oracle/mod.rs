//! Independent brute-force reference implementations.
//!
//! Everything in this module favours clarity over speed: dense matrices,
//! explicit conditioning, exhaustive enumeration. These are the ground truth
//! that the fast closed-form components elsewhere in the crate are tested
//! against, and the oracles cross-validate each other (Kalman vs dense
//! joint-Gaussian conditioning, block formulas vs dense linear algebra).

mod dense;
mod enumerate;
mod kalman;
mod marginal;

pub use dense::{joint_prior_moments, joint_xu_moments, DenseGaussian};
pub use enumerate::{enumerate_backward, path_index, sample_final_index};
pub use kalman::{AffineSsm, FilterResult, SmootherResult};
pub use marginal::{exact_marginal_proposal_logpdf, MarginalProposalSpec};
