//! Numerical diagnostics for the local asymptotic normality expansion and
//! the limit law of the test statistic under local alternatives.
//!
//! Along a curve with tangent `g`, the product-model log-likelihood ratio at
//! local scale `1/sqrt(n)` expands as
//! `logLR = n^{-1/2} sum_i g(X_i) - (1/2) int g^2 dP0 + R_n`, with the
//! remainder vanishing in probability. Under the local alternative
//! `P_{t/sqrt(n)}^n` the statistic `T_n` converges to a normal with mean
//! `theta = t int g k~ dP0` and variance `int k~^2 dP0`; this module measures
//! both effects on finite samples.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curves::{LocalCurve, LocalSequence};
use crate::functionals::CanonicalGradient;
use crate::mc::derive_seed;
use crate::measures::{MeasureError, Sample, SpaceFn};
use crate::testing::{normal_cdf, test_statistic};

pub const MIN_REPLICATES: usize = 100;

#[derive(Debug, Error)]
pub enum LanError {
    #[error("need at least {MIN_REPLICATES} replicates, got {0}")]
    TooFewReplicates(usize),
    #[error(transparent)]
    Curve(#[from] crate::curves::CurveError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Per-observation log density ratio values on a finite support, precomputed
/// so that replicate loops reduce to table lookups.
fn finite_log_ratios(curve: &LocalCurve, tau: f64, c: f64) -> Option<Vec<f64>> {
    let raw = curve.tangent().raw().as_atoms()?;
    let log_c = c.ln();
    Some(
        raw.iter()
            .map(|r| {
                let s = 1.0 + tau * r / 2.0;
                if s == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    2.0 * s.abs().ln() - log_c
                }
            })
            .collect(),
    )
}

/// `log(dP_{g/sqrt(n)}^n / dP0^n)` evaluated on a sample of size `n`.
///
/// Observations sitting exactly on a zero of the perturbed density (possible
/// only when `1 + g(x) t / 2 = 0`) yield a negative-infinity sentinel, never
/// a silent drop.
pub fn log_likelihood_ratio(sample: &Sample, curve: &LocalCurve, n: usize) -> f64 {
    assert_eq!(sample.n(), n, "sample size must match the local scale n");
    let t = 1.0 / (n as f64).sqrt();
    let tau = curve.tau(t);
    let c = curve.normalizer(t);
    match (&sample.obs, curve.tangent().raw()) {
        (crate::measures::Observations::Atoms(idx), SpaceFn::Atoms(_)) => {
            let table = finite_log_ratios(curve, tau, c).expect("finite tangent");
            idx.iter().fold(0.0, |acc, &j| acc + table[j])
        }
        (crate::measures::Observations::Reals(xs), SpaceFn::Real(g)) => {
            let log_c = c.ln();
            xs.iter().fold(0.0, |acc, &x| {
                let s = 1.0 + tau * g(x) / 2.0;
                if s == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    acc + 2.0 * s.abs().ln() - log_c
                }
            })
        }
        _ => panic!("sample kind does not match the curve's base measure"),
    }
}

/// LAN remainder
/// `R_n = logLR - [n^{-1/2} sum_i g(X_i) - (1/2) int g^2 dP0]`.
pub fn lan_remainder(sample: &Sample, curve: &LocalCurve, n: usize) -> f64 {
    let loglr = log_likelihood_ratio(sample, curve, n);
    let central = curve.tangent().sum_over(&sample.obs) / (n as f64).sqrt();
    loglr - (central - 0.5 * curve.tangent().norm_sq())
}

/// Report of the LAN diagnostics at sample size `n`.
///
/// The log-likelihood-ratio moments and remainder quantiles are estimated
/// under the base measure; the Kolmogorov-Smirnov distance compares the law
/// of the standardized statistic under the local alternative at scale `t`
/// with the standard normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanReport {
    pub n: usize,
    pub replicates: usize,
    pub t: f64,
    /// Local parameter `t int g k~ dP0` used to center the statistic.
    pub theta: f64,
    /// Median of `|R_n|` over the null replicates.
    pub remainder_median: f64,
    /// 90th percentile of `|R_n|` over the null replicates.
    pub remainder_p90: f64,
    pub loglr_mean: f64,
    pub loglr_var: f64,
    /// Empirical mean of `T_n` under the alternative; tracks `theta` within
    /// Monte Carlo error by the third-lemma shift.
    pub statistic_mean: f64,
    /// KS distance of `(T_n - theta) / ||k~||` under the alternative to the
    /// standard normal CDF.
    pub ks_to_limit: f64,
    /// Replicates whose log-likelihood ratio hit the -inf sentinel; they are
    /// excluded from the moment estimates but never silently dropped.
    pub degenerate_replicates: usize,
    pub master_seed: u64,
}

/// Draws `replicates` samples of size `n` under both the base measure and the
/// local alternative `P_{t/sqrt(n)}` and fills a [`LanReport`].
pub fn third_lemma_check(
    curve: &LocalCurve,
    grad: &CanonicalGradient,
    t: f64,
    n: usize,
    replicates: usize,
    master_seed: u64,
) -> Result<LanReport, LanError> {
    if replicates < MIN_REPLICATES {
        return Err(LanError::TooFewReplicates(replicates));
    }
    let seq = LocalSequence::new(curve.clone(), t)?;
    let theta = seq.local_parameter(grad)?;
    let alternative = seq.measure_at_n(n);
    let norm = grad.norm();

    // Alternative arm: the statistic's standardized law.
    let statistics: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let sample = alternative.draw(n, derive_seed(master_seed, r as u64));
            test_statistic(&sample, grad)
        })
        .collect();
    let statistic_mean = statistics.iter().sum::<f64>() / replicates as f64;
    let mut standardized: Vec<f64> = statistics.iter().map(|v| (v - theta) / norm).collect();
    let ks_to_limit = ks_distance_sorted(&mut standardized, normal_cdf);

    // Null arm: log-likelihood ratios and remainders under the base measure.
    let base = curve.base().clone();
    let null_stats: Vec<(f64, f64)> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(master_seed, (r + replicates) as u64);
            let sample = base.draw(n, seed);
            (
                log_likelihood_ratio(&sample, curve, n),
                lan_remainder(&sample, curve, n),
            )
        })
        .collect();

    let degenerate_replicates = null_stats
        .iter()
        .filter(|(l, _)| l.is_infinite())
        .count();
    let finite: Vec<(f64, f64)> = null_stats
        .iter()
        .copied()
        .filter(|(l, _)| l.is_finite())
        .collect();
    let m = finite.len().max(1) as f64;
    let loglr_mean = finite.iter().map(|(l, _)| l).sum::<f64>() / m;
    let loglr_var = if finite.len() > 1 {
        finite
            .iter()
            .map(|(l, _)| (l - loglr_mean) * (l - loglr_mean))
            .sum::<f64>()
            / (m - 1.0)
    } else {
        0.0
    };
    let mut abs_remainders: Vec<f64> = finite.iter().map(|(_, r)| r.abs()).collect();
    abs_remainders.sort_by(|a, b| a.partial_cmp(b).expect("finite remainders"));
    let remainder_median = quantile_sorted(&abs_remainders, 0.5);
    let remainder_p90 = quantile_sorted(&abs_remainders, 0.9);

    Ok(LanReport {
        n,
        replicates,
        t,
        theta,
        remainder_median,
        remainder_p90,
        loglr_mean,
        loglr_var,
        statistic_mean,
        ks_to_limit,
        degenerate_replicates,
        master_seed,
    })
}

/// Order statistic at probability `p` (midpoint rule for the median).
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let n = sorted.len();
    if (p - 0.5).abs() < 1e-12 && n.is_multiple_of(2) {
        return 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    }
    let idx = ((p * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

// ---------------------------------------------------------------------------
// Kolmogorov-Smirnov distance
// ---------------------------------------------------------------------------

/// KS distance of a sample to a reference CDF.
pub fn ks_distance(values: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = values.to_vec();
    ks_distance_sorted(&mut sorted, cdf)
}

fn ks_distance_sorted(values: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite statistics"));
    let n = values.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in values.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    d
}

/// Asymptotic KS critical coefficient `c(level)` with
/// `P(sqrt(n) D_n > c) -> level`; table for levels 0.10, 0.05, 0.01.
pub fn ks_critical_coefficient(level: f64) -> Option<f64> {
    // c = sqrt(-ln(level/2) / 2)
    if (level - 0.10).abs() < 1e-12 {
        Some(1.223_873_415_340_408_3)
    } else if (level - 0.05).abs() < 1e-12 {
        Some(1.358_101_515_740_619_5)
    } else if (level - 0.01).abs() < 1e-12 {
        Some(1.627_623_630_718_729_3)
    } else {
        None
    }
}

/// Critical value `c(level) / sqrt(n)` for a sample of size `n`.
pub fn ks_critical_value(level: f64, n: usize) -> Option<f64> {
    ks_critical_coefficient(level).map(|c| c / (n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::TangentFunction;
    use crate::functionals::multinomial_gradient;
    use crate::measures::{FiniteMeasure, Observations};

    fn canonical() -> (LocalCurve, CanonicalGradient) {
        let base = FiniteMeasure::uniform(3);
        let tangent = TangentFunction::centered(&base, &[1.0, -1.0, 0.0]).unwrap();
        let grad = multinomial_gradient(&base, &[1.0, 0.0, 0.0]).unwrap();
        (LocalCurve::new(tangent), grad)
    }

    #[test]
    fn loglr_zero_tangent() {
        let base = FiniteMeasure::uniform(3);
        let tangent = TangentFunction::centered(&base, &[0.0, 0.0, 0.0]).unwrap();
        let curve = LocalCurve::new(tangent);
        let sample = base.draw(100, 3);
        assert_eq!(log_likelihood_ratio(&sample, &curve, 100), 0.0);
        assert_eq!(lan_remainder(&sample, &curve, 100), 0.0);
    }

    #[test]
    fn loglr_single_observation_example() {
        // n = 1 so the local scale is 1; observing the first atom gives
        // log((1 + 1/2)^2 / c) = log(27/14).
        let (curve, _) = canonical();
        let sample = Sample {
            obs: Observations::Atoms(vec![0]),
            seed: 0,
        };
        let v = log_likelihood_ratio(&sample, &curve, 1);
        assert!((v - 0.656_779_536_389_070_5).abs() <= 1e-14);
    }

    #[test]
    fn loglr_is_additive_over_observations() {
        // The sum over the sample equals the sum of per-observation log
        // ratios at the same local scale.
        let (curve, _) = canonical();
        let n = 64;
        let sample = curve.base().as_finite().unwrap().draw(n, 11);
        let total = log_likelihood_ratio(&sample, &curve, n);
        let Observations::Atoms(idx) = &sample.obs else {
            panic!()
        };
        let t = 1.0 / (n as f64).sqrt();
        let tau = curve.tau(t);
        let log_c = curve.normalizer(t).ln();
        let raw = curve.tangent().raw().as_atoms().unwrap();
        let per_obs: f64 = idx
            .iter()
            .map(|&j| {
                let s = 1.0 + tau * raw[j] / 2.0;
                2.0 * s.abs().ln() - log_c
            })
            .sum();
        assert!((total - per_obs).abs() <= 1e-10);
    }

    #[test]
    fn remainder_reparametrization() {
        // The scaled tangent a*g at local size n has the same remainder as
        // evaluating the original curve's expansion with tangent a*g.
        let (curve, _) = canonical();
        let scaled = curve.scaled(0.5);
        let n = 49;
        let sample = curve.base().as_finite().unwrap().draw(n, 5);
        let r1 = lan_remainder(&sample, &scaled, n);

        let base = curve.base().as_finite().unwrap();
        let eager = LocalCurve::new(
            TangentFunction::centered(base, &[0.5, -0.5, 0.0]).unwrap(),
        );
        let r2 = lan_remainder(&sample, &eager, n);
        assert!((r1 - r2).abs() <= 1e-12);
    }

    #[test]
    fn sentinel_on_zero_density() {
        // tau * raw = -2 puts an atom exactly on the density zero.
        let base = FiniteMeasure::uniform(2);
        let tangent = TangentFunction::centered(&base, &[1.0, -1.0]).unwrap();
        // raw = (1, -1); at n = 1 the local scale is 1, so scale by 2 to hit
        // 1 + (-2)/2 = 0 on the second atom.
        let curve = LocalCurve::new(tangent.scaled(2.0));
        let sample = Sample {
            obs: Observations::Atoms(vec![1]),
            seed: 0,
        };
        let v = log_likelihood_ratio(&sample, &curve, 1);
        assert_eq!(v, f64::NEG_INFINITY);
        assert_eq!(lan_remainder(&sample, &curve, 1), f64::NEG_INFINITY);
    }

    #[test]
    fn ks_distance_simple_cases() {
        // Empirical CDF of {0.25, 0.75} against uniform(0,1).
        let d = ks_distance(&[0.25, 0.75], |x| x.clamp(0.0, 1.0));
        assert!((d - 0.25).abs() <= 1e-15);

        let d = ks_distance(&[0.5], |x| x.clamp(0.0, 1.0));
        assert!((d - 0.5).abs() <= 1e-15);
    }

    #[test]
    fn ks_critical_table() {
        assert!(ks_critical_coefficient(0.01).unwrap() > ks_critical_coefficient(0.05).unwrap());
        assert!(ks_critical_coefficient(0.05).unwrap() > ks_critical_coefficient(0.10).unwrap());
        assert_eq!(ks_critical_coefficient(0.2), None);
        let v = ks_critical_value(0.01, 10_000).unwrap();
        assert!((v - 0.01627623630718729).abs() <= 1e-12);
    }

    #[test]
    fn third_lemma_check_validates_replicates() {
        let (curve, grad) = canonical();
        assert!(matches!(
            third_lemma_check(&curve, &grad, 1.0, 50, 50, 1),
            Err(LanError::TooFewReplicates(50))
        ));
    }

    #[test]
    fn third_lemma_check_mean_shift() {
        // The empirical mean of T_n under the local alternative tracks theta
        // within 3 ||k~|| / sqrt(replicates).
        let (curve, grad) = canonical();
        let t = 2.0;
        let n = 400;
        let replicates = 400;
        let report = third_lemma_check(&curve, &grad, t, n, replicates, 77).unwrap();
        assert!((report.theta - 2.0 / 3.0).abs() <= 1e-12);
        assert_eq!(report.degenerate_replicates, 0);
        let band = 3.0 * grad.norm() / (replicates as f64).sqrt();
        assert!(
            (report.statistic_mean - report.theta).abs() <= band,
            "mean {} vs theta {} (band {band})",
            report.statistic_mean,
            report.theta
        );
        assert!(report.ks_to_limit > 0.0 && report.ks_to_limit < 0.15);
    }

    #[test]
    fn orthogonal_tangent_kills_the_shift() {
        let base = FiniteMeasure::uniform(3);
        let orth = TangentFunction::centered(&base, &[0.0, 1.0, -1.0]).unwrap();
        let grad = multinomial_gradient(&base, &[1.0, 0.0, 0.0]).unwrap();
        let report =
            third_lemma_check(&LocalCurve::new(orth), &grad, 2.0, 400, 400, 13).unwrap();
        assert_eq!(report.theta, 0.0);
        let band = 3.0 * grad.norm() / 20.0;
        assert!(report.statistic_mean.abs() <= band);
    }

    #[test]
    fn quantiles_of_sorted_data() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_eq!(quantile_sorted(&v, 0.9), 4.0);
        let w = [1.0, 2.0, 3.0];
        assert_eq!(quantile_sorted(&w, 0.5), 2.0);
    }
}
