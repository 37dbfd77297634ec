//! Chain diagnostics: rank-normalised multi-chain effective sample size,
//! autocorrelation, energy traces and per-time-step acceptance rates.

use crate::error::Result;
use crate::model::{log_target, FeynmanKac, Trajectory};

/// Effective sample size with a degeneracy flag: constant pooled draws make
/// the estimator meaningless, in which case the total draw count is
/// reported and `degenerate` is set.
#[derive(Debug, Clone, Copy)]
pub struct EssResult {
    pub ess: f64,
    pub degenerate: bool,
}

/// Rank-normalised multi-chain ESS.
///
/// Chains are split in half, the pooled draws are rank-normalised through
/// the standard-normal quantile function, and the combined autocorrelation
/// sequence is truncated by the initial-monotone-positive-pair rule before
/// summing. Rank normalisation makes the result invariant under strictly
/// monotone transformations of the draws.
pub fn ess_rank_normalized(chains: &[Vec<f64>]) -> EssResult {
    let n_chains = chains.len();
    assert!(n_chains >= 2, "need at least two chains");
    let len = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    assert!(len >= 8, "need at least eight draws per chain");

    // Split each chain in half.
    let half = len / 2;
    let mut split: Vec<&[f64]> = Vec::with_capacity(2 * n_chains);
    for c in chains {
        split.push(&c[..half]);
        split.push(&c[half..2 * half]);
    }
    let m = split.len();
    let total = m * half;

    // Pooled ranks -> normal scores. Ties are broken by position, which
    // keeps the result deterministic and invariant under strictly
    // increasing transformations.
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(total);
    for (ci, chain) in split.iter().enumerate() {
        for (i, &v) in chain.iter().enumerate() {
            order.push((v, ci * half + i));
        }
    }
    if order.iter().all(|(v, _)| *v == order[0].0) {
        return EssResult { ess: (n_chains * len) as f64, degenerate: true };
    }
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut z = vec![0.0; total];
    let denom = total as f64 + 0.25;
    for (rank, (_, idx)) in order.iter().enumerate() {
        let p = (rank as f64 + 1.0 - 0.375) / denom;
        z[*idx] = normal_quantile(p);
    }
    let z_chains: Vec<&[f64]> = (0..m).map(|ci| &z[ci * half..(ci + 1) * half]).collect();

    // Within/between variances on the normal scores.
    let means: Vec<f64> =
        z_chains.iter().map(|c| c.iter().sum::<f64>() / half as f64).collect();
    let vars: Vec<f64> = z_chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (half as f64 - 1.0))
        .collect();
    let w: f64 = vars.iter().sum::<f64>() / m as f64;
    let grand = means.iter().sum::<f64>() / m as f64;
    let between: f64 =
        means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>() / (m as f64 - 1.0);
    let var_plus = w * (half as f64 - 1.0) / half as f64 + between;
    if var_plus.is_nan() || var_plus <= 0.0 || !var_plus.is_finite() {
        return EssResult { ess: (n_chains * len) as f64, degenerate: true };
    }

    // Mean autocovariance across chains, biased (divide by n) as usual.
    let max_lag = half - 1;
    let mut rho = Vec::with_capacity(max_lag);
    for lag in 0..max_lag {
        let mut acov = 0.0;
        for (c, mu) in z_chains.iter().zip(&means) {
            let mut s = 0.0;
            for i in 0..half - lag {
                s += (c[i] - mu) * (c[i + lag] - mu);
            }
            acov += s / half as f64;
        }
        acov /= m as f64;
        rho.push(1.0 - (w - acov) / var_plus);
    }

    // Geyer initial monotone positive sequence over pair sums.
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < rho.len() {
        let mut pair = rho[2 * k] + rho[2 * k + 1];
        if pair <= 0.0 {
            break;
        }
        pair = pair.min(prev_pair);
        prev_pair = pair;
        tau += 2.0 * pair;
        k += 1;
    }
    let tau = tau.max(1.0 / total as f64);
    EssResult { ess: total as f64 / tau, degenerate: false }
}

/// Direct-sum autocorrelation of one series up to `max_lag` (inclusive).
/// A constant series returns lag-0 autocorrelation 1 and zeros elsewhere.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Vec<f64> {
    let n = series.len();
    assert!(n > 0);
    let mean = series.iter().sum::<f64>() / n as f64;
    let var: f64 = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let mut out = Vec::with_capacity(max_lag + 1);
    out.push(1.0);
    for lag in 1..=max_lag {
        if var <= 0.0 || lag >= n {
            out.push(0.0);
            continue;
        }
        let mut s = 0.0;
        for i in 0..n - lag {
            s += (series[i] - mean) * (series[i + lag] - mean);
        }
        out.push(s / (n as f64 * var));
    }
    out
}

/// `log π_T` along a run of samples.
pub fn energy_trace(model: &dyn FeynmanKac, samples: &[Trajectory]) -> Result<Vec<f64>> {
    samples.iter().map(|s| log_target(model, s)).collect()
}

/// Per-time-step acceptance rate over a run.
pub fn acceptance_by_time(accept_history: &[Vec<bool>]) -> Vec<f64> {
    if accept_history.is_empty() {
        return Vec::new();
    }
    let horizon = accept_history[0].len();
    let mut rates = vec![0.0; horizon];
    for row in accept_history {
        for (t, a) in row.iter().enumerate() {
            if *a {
                rates[t] += 1.0;
            }
        }
    }
    for r in rates.iter_mut() {
        *r /= accept_history.len() as f64;
    }
    rates
}

/// Standard-normal quantile function (Acklam's rational approximation,
/// refined by one Halley step; absolute error well below 1e-9).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile argument must lie in (0, 1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    let x = if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    // One Halley refinement against the exact CDF.
    let e = 0.5 * erfc_scalar(-x / std::f64::consts::SQRT_2) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    x - u / (1.0 + x * u / 2.0)
}

/// Complementary error function (Numerical Recipes style rational
/// approximation, |error| < 1.2e-7, adequate after the Halley step above).
fn erfc_scalar(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let ans = t
        * (-z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587
                                        + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        ans
    } else {
        2.0 - ans
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Prng;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    #[test]
    fn quantile_matches_known_points() {
        // Accuracy is limited by the rational erfc inside the Halley step
        // (~1e-7), which is far below what rank scores need.
        assert!(normal_quantile(0.5).abs() < 1e-7);
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-7);
        assert!((normal_quantile(0.025) + 1.959963984540054).abs() < 1e-7);
        assert!((normal_quantile(1e-6) + 4.753424308822899).abs() < 1e-5);
    }

    #[test]
    fn iid_chains_have_full_ess() {
        let mut rng = Prng::seed_from_u64(40);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..5000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let res = ess_rank_normalized(&chains);
        assert!(!res.degenerate);
        let total = 20_000.0;
        assert!(
            (res.ess - total).abs() / total < 0.15,
            "iid ESS {} should be within 15% of {total}",
            res.ess
        );
    }

    #[test]
    fn ar1_chains_match_analytic_ess() {
        let mut rng = Prng::seed_from_u64(41);
        let coeff: f64 = 0.9;
        let innovation = (1.0 - coeff * coeff).sqrt();
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = rng.sample::<f64, _>(StandardNormal);
                (0..20_000)
                    .map(|_| {
                        x = coeff * x + innovation * rng.sample::<f64, _>(StandardNormal);
                        x
                    })
                    .collect()
            })
            .collect();
        let res = ess_rank_normalized(&chains);
        let expect = 80_000.0 * (1.0 - coeff) / (1.0 + coeff);
        assert!(
            (res.ess - expect).abs() / expect < 0.2,
            "AR(1) ESS {} vs analytic {expect}",
            res.ess
        );
    }

    #[test]
    fn constant_chains_flagged_degenerate() {
        let chains = vec![vec![2.5; 100], vec![2.5; 100]];
        let res = ess_rank_normalized(&chains);
        assert!(res.degenerate);
        assert_eq!(res.ess, 200.0);
    }

    #[test]
    fn anticorrelated_chains_do_not_produce_nan() {
        let mut chains = Vec::new();
        for s in 0..2 {
            let chain: Vec<f64> =
                (0..1000).map(|i| if (i + s) % 2 == 0 { 1.0 } else { -1.0 }).collect();
            chains.push(chain);
        }
        let res = ess_rank_normalized(&chains);
        assert!(res.ess.is_finite() && res.ess > 0.0);
    }

    #[test]
    fn ess_invariant_under_monotone_transform() {
        let mut rng = Prng::seed_from_u64(42);
        let chains: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                let mut x = 0.0;
                (0..2000)
                    .map(|_| {
                        x = 0.5 * x + rng.sample::<f64, _>(StandardNormal);
                        x
                    })
                    .collect()
            })
            .collect();
        let transformed: Vec<Vec<f64>> =
            chains.iter().map(|c| c.iter().map(|v| (v * 0.3).exp()).collect()).collect();
        let a = ess_rank_normalized(&chains);
        let b = ess_rank_normalized(&transformed);
        assert!((a.ess - b.ess).abs() < 1e-9);
    }

    #[test]
    fn autocorrelation_conventions() {
        let constant = vec![3.0; 50];
        let ac = autocorrelation(&constant, 3);
        assert_eq!(ac[0], 1.0);
        assert_eq!(&ac[1..], &[0.0, 0.0, 0.0]);

        let mut rng = Prng::seed_from_u64(43);
        let noise: Vec<f64> =
            (0..20_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let ac = autocorrelation(&noise, 1);
        assert!(ac[1].abs() < 3.0 / (noise.len() as f64).sqrt());
    }

    #[test]
    fn energy_trace_of_repeated_sample_is_constant() {
        use crate::model::{make_lgssm, Trajectory};
        let model = make_lgssm(2, 3, 1.0, vec![nalgebra::DVector::zeros(2); 3]).unwrap();
        let traj = Trajectory::zeros(3, 2);
        let trace = energy_trace(&model, &vec![traj; 5]).unwrap();
        assert!(trace.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn acceptance_rates_average_to_scalar_rate() {
        let history = vec![
            vec![true, false, true],
            vec![true, true, false],
            vec![false, true, true],
            vec![true, true, true],
        ];
        let rates = acceptance_by_time(&history);
        assert!(rates.iter().all(|r| (0.0..=1.0).contains(r)));
        let scalar: f64 = history
            .iter()
            .flat_map(|row| row.iter())
            .map(|a| if *a { 1.0 } else { 0.0 })
            .sum::<f64>()
            / 12.0;
        let mean = rates.iter().sum::<f64>() / rates.len() as f64;
        assert!((mean - scalar).abs() < 1e-12);
    }
}
