//! One-sided and two-sided score tests built on a canonical gradient, their
//! exact asymptotic power functions, and the supporting normal distribution
//! primitives.
//!
//! The test statistic is `T_n = n^{-1/2} sum_i k~(X_i)`. The one-sided test
//! rejects when `T_n` strictly exceeds `u_{1-alpha} ||k~||`; the two-sided
//! test rejects when `|T_n|` strictly exceeds `u_{1-alpha/2} ||k~||`. The
//! boundary is deliberately open: equality never rejects.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functionals::CanonicalGradient;
use crate::measures::Sample;

#[derive(Debug, Error)]
pub enum TestError {
    #[error("level alpha must lie strictly between 0 and 1, got {0}")]
    InvalidLevel(f64),
    #[error("plug-in variance estimate {0:e} is at or below 1e-12")]
    ZeroNormEstimate(f64),
    #[error("quantile argument must lie strictly between 0 and 1, got {0}")]
    QuantileDomain(f64),
    #[error("cannot test an empty sample")]
    EmptySample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    OneSided,
    TwoSided,
}

/// Where the gradient norm in the rejection threshold comes from: the exact
/// `||k~||` under the base measure, or a plug-in estimate from the sample
/// (standard deviation of the scores with denominator `n`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormSource {
    Exact,
    PlugIn,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TestConfig {
    pub alpha: f64,
    pub sidedness: Sidedness,
    pub norm_source: NormSource,
}

impl TestConfig {
    pub fn new(alpha: f64, sidedness: Sidedness, norm_source: NormSource) -> Result<Self, TestError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(TestError::InvalidLevel(alpha));
        }
        Ok(Self {
            alpha,
            sidedness,
            norm_source,
        })
    }

    /// One-sided at level `alpha` with the exact norm (the default pairing).
    pub fn one_sided(alpha: f64) -> Result<Self, TestError> {
        Self::new(alpha, Sidedness::OneSided, NormSource::Exact)
    }

    pub fn two_sided(alpha: f64) -> Result<Self, TestError> {
        Self::new(alpha, Sidedness::TwoSided, NormSource::Exact)
    }
}

/// Outcome of a single test run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub critical_value: f64,
    pub reject: bool,
    pub p_value: f64,
    pub n: usize,
    pub alpha: f64,
    pub sidedness: Sidedness,
}

/// `T_n = n^{-1/2} sum_i k~(X_i)`.
pub fn test_statistic(sample: &Sample, grad: &CanonicalGradient) -> f64 {
    assert!(sample.n() >= 1, "sample must be nonempty");
    grad.score_sum(&sample.obs) / (sample.n() as f64).sqrt()
}

/// Runs the score test on a sample.
pub fn run_test(
    sample: &Sample,
    grad: &CanonicalGradient,
    config: &TestConfig,
) -> Result<TestOutcome, TestError> {
    if sample.n() == 0 {
        return Err(TestError::EmptySample);
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(TestError::InvalidLevel(config.alpha));
    }
    let statistic = test_statistic(sample, grad);
    let norm = match config.norm_source {
        NormSource::Exact => grad.norm(),
        NormSource::PlugIn => plug_in_norm(sample, grad)?,
    };
    let (critical_value, reject, p_value) = match config.sidedness {
        Sidedness::OneSided => {
            let critical = normal_quantile(1.0 - config.alpha)? * norm;
            (
                critical,
                statistic > critical,
                1.0 - normal_cdf(statistic / norm),
            )
        }
        Sidedness::TwoSided => {
            let critical = normal_quantile(1.0 - config.alpha / 2.0)? * norm;
            (
                critical,
                statistic.abs() > critical,
                2.0 * (1.0 - normal_cdf(statistic.abs() / norm)),
            )
        }
    };
    Ok(TestOutcome {
        statistic,
        critical_value,
        reject,
        p_value,
        n: sample.n(),
        alpha: config.alpha,
        sidedness: config.sidedness,
    })
}

/// Score standard deviation with denominator `n`.
fn plug_in_norm(sample: &Sample, grad: &CanonicalGradient) -> Result<f64, TestError> {
    let n = sample.n() as f64;
    let mean = grad.score_sum(&sample.obs) / n;
    let var = match &sample.obs {
        crate::measures::Observations::Atoms(idx) => idx.iter().fold(0.0, |acc, &j| {
            let d = grad.evaluate().eval_atom(j) - mean;
            acc + d * d
        }),
        crate::measures::Observations::Reals(xs) => xs.iter().fold(0.0, |acc, &x| {
            let d = grad.evaluate().eval_real(x) - mean;
            acc + d * d
        }),
    } / n;
    if var <= 1e-12 {
        return Err(TestError::ZeroNormEstimate(var));
    }
    Ok(var.sqrt())
}

/// Limiting power of the tests along a local sequence with parameter `theta`.
///
/// One-sided: `Phi(theta/||k~|| - u_{1-alpha})`. Two-sided:
/// `Phi(theta/||k~|| - u_{1-alpha/2}) + Phi(-theta/||k~|| - u_{1-alpha/2})`.
pub fn asymptotic_power(theta: f64, norm: f64, config: &TestConfig) -> f64 {
    assert!(norm > 0.0, "gradient norm must be positive");
    let shift = theta / norm;
    match config.sidedness {
        Sidedness::OneSided => {
            let u = normal_quantile(1.0 - config.alpha).expect("alpha validated");
            normal_cdf(shift - u)
        }
        Sidedness::TwoSided => {
            let u = normal_quantile(1.0 - config.alpha / 2.0).expect("alpha validated");
            normal_cdf(shift - u) + normal_cdf(-shift - u)
        }
    }
}

// ---------------------------------------------------------------------------
// Standard normal distribution
// ---------------------------------------------------------------------------

/// Standard normal CDF, absolute error below 1e-14.
pub fn normal_cdf(x: f64) -> f64 {
    // Phi(x) = erfc(-x / sqrt(2)) / 2, evaluated through erfc on [0, inf)
    // so that tail values do not lose accuracy to cancellation.
    let y = -x / std::f64::consts::SQRT_2;
    if y <= 0.0 {
        1.0 - 0.5 * erfc_nonneg(-y)
    } else {
        0.5 * erfc_nonneg(y)
    }
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal quantile by safeguarded Newton iteration on the CDF,
/// accurate to well below 1e-12.
pub fn normal_quantile(u: f64) -> Result<f64, TestError> {
    if !(u > 0.0 && u < 1.0) {
        return Err(TestError::QuantileDomain(u));
    }
    // Bracket the root, then refine with Newton steps that fall back to
    // bisection whenever they leave the bracket.
    let mut lo = -40.0;
    let mut hi = 40.0;
    let mut x = 0.0;
    for _ in 0..200 {
        let f = normal_cdf(x) - u;
        if f > 0.0 {
            hi = x;
        } else if f < 0.0 {
            lo = x;
        } else {
            return Ok(x);
        }
        let d = normal_pdf(x);
        let mut next = if d > 0.0 { x - f / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

/// erfc on [0, inf): series below 2, Lentz continued fraction above.
fn erfc_nonneg(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < 2.0 {
        1.0 - erf_series(x)
    } else {
        erfc_cf(x)
    }
}

/// erf by the all-positive-terms series
/// `erf(x) = (2/sqrt(pi)) e^{-x^2} sum_{n>=0} (2x^2)^n x / (2n+1)!!`.
fn erf_series(x: f64) -> f64 {
    let two_x_sq = 2.0 * x * x;
    let mut term = x;
    let mut sum = x;
    let mut k = 1.0;
    while term.abs() > 1e-18 * sum.abs() {
        term *= two_x_sq / (2.0 * k + 1.0);
        sum += term;
        k += 1.0;
        if k > 200.0 {
            break;
        }
    }
    2.0 / std::f64::consts::PI.sqrt() * (-x * x).exp() * sum
}

/// erfc for x >= 2 via the continued fraction
/// `sqrt(pi) e^{x^2} erfc(x) = 1 / (x + (1/2)/(x + (2/2)/(x + ...)))`,
/// evaluated backward from a fixed depth (ample for x >= 2).
fn erfc_cf(x: f64) -> f64 {
    let mut acc = 0.0;
    for n in (1..=160).rev() {
        acc = (n as f64 / 2.0) / (x + acc);
    }
    (-x * x).exp() / (std::f64::consts::PI.sqrt() * (x + acc))
}
