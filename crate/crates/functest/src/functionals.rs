//! The worked statistical functionals: their values, canonical gradients,
//! gradient norms, and tangent-orthogonality checks.
//!
//! Three functionals are supported: the linear (von Mises) functional
//! `P -> E_P[h]`, the median of a distribution with positive density, and a
//! smooth function of multinomial cell probabilities. In each case the
//! canonical gradient is the centered influence function; the full-model
//! tangent space makes centering sufficient, so no projection step is needed.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::curves::TangentFunction;
use crate::measures::{
    ContinuousMeasure, FiniteMeasure, Measure, MeasureError, Observations, SpaceFn,
};

/// Gradients with squared norm at or below this threshold are rejected as
/// degenerate: the score test requires a nonvanishing canonical gradient.
pub const DEGENERACY_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FunctionalError {
    #[error("canonical gradient is degenerate (norm_sq = {norm_sq:e} <= {DEGENERACY_THRESHOLD:e})")]
    DegenerateGradient { norm_sq: f64 },
    #[error("density at the median must be positive, got {0}")]
    NonpositiveDensity(f64),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// `sign` with no zero case, so that products of coincident sign functions
/// are exactly constant almost everywhere (and pointwise).
pub(crate) fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

// ---------------------------------------------------------------------------
// Functional specifications
// ---------------------------------------------------------------------------

pub type ProbVecFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// One of the supported functional kinds.
#[derive(Clone)]
pub enum FunctionalSpec {
    /// `k(P) = E_P[h]` for a fixed kernel `h`.
    VonMises { kernel: SpaceFn },
    /// `k(P) = med(P)`; the density value at the median is analytic input.
    Median { density_at_median: f64 },
    /// `k(P) = f(p_1, ..., p_m)` with the partial derivatives of `f` at the
    /// base probabilities supplied as weights.
    MultinomialSmooth { f: ProbVecFn, weights: Vec<f64> },
}

impl fmt::Debug for FunctionalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FunctionalSpec::VonMises { kernel } => {
                f.debug_struct("VonMises").field("kernel", kernel).finish()
            }
            FunctionalSpec::Median { density_at_median } => f
                .debug_struct("Median")
                .field("density_at_median", density_at_median)
                .finish(),
            FunctionalSpec::MultinomialSmooth { weights, .. } => f
                .debug_struct("MultinomialSmooth")
                .field("weights", weights)
                .finish_non_exhaustive(),
        }
    }
}

impl FunctionalSpec {
    pub fn von_mises(kernel: SpaceFn) -> Self {
        FunctionalSpec::VonMises { kernel }
    }

    pub fn median(density_at_median: f64) -> Self {
        FunctionalSpec::Median { density_at_median }
    }

    pub fn multinomial(
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        weights: Vec<f64>,
    ) -> Self {
        FunctionalSpec::MultinomialSmooth {
            f: Arc::new(f),
            weights,
        }
    }

    /// Smooth multinomial functional that is linear in the probabilities:
    /// `f(p) = sum w_i p_i`, whose partials are the weights everywhere.
    pub fn multinomial_linear(weights: Vec<f64>) -> Self {
        let w = weights.clone();
        Self::multinomial(
            move |p| w.iter().zip(p).fold(0.0, |acc, (wi, pi)| acc + wi * pi),
            weights,
        )
    }

    /// The canonical gradient of this functional at `base`.
    pub fn gradient(&self, base: &Measure) -> Result<CanonicalGradient, FunctionalError> {
        match self {
            FunctionalSpec::VonMises { kernel } => von_mises_gradient(base, kernel),
            FunctionalSpec::Median { density_at_median } => {
                let m = base
                    .as_continuous()
                    .expect("median functional requires a continuous base measure");
                median_gradient(m, *density_at_median)
            }
            FunctionalSpec::MultinomialSmooth { weights, .. } => {
                let m = base
                    .as_finite()
                    .expect("multinomial functional requires a finite base measure");
                multinomial_gradient(m, weights)
            }
        }
    }

    /// The functional's value at an unperturbed measure.
    pub fn value(&self, measure: &Measure) -> Result<f64, FunctionalError> {
        match self {
            FunctionalSpec::VonMises { kernel } => Ok(von_mises_value(measure, kernel)?),
            FunctionalSpec::Median { .. } => {
                let m = measure
                    .as_continuous()
                    .expect("median functional requires a continuous base measure");
                Ok(median_value(m))
            }
            FunctionalSpec::MultinomialSmooth { f, .. } => {
                let m = measure
                    .as_finite()
                    .expect("multinomial functional requires a finite base measure");
                Ok(f(m.probs()))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Canonical gradients
// ---------------------------------------------------------------------------

/// The canonical gradient of a functional at a base measure: a mean-zero
/// score function together with its squared norm under the base.
#[derive(Debug, Clone)]
pub struct CanonicalGradient {
    evaluate: SpaceFn,
    norm_sq: f64,
    base: Measure,
}

impl CanonicalGradient {
    pub(crate) fn new(evaluate: SpaceFn, norm_sq: f64, base: Measure) -> Self {
        Self {
            evaluate,
            norm_sq,
            base,
        }
    }

    pub fn evaluate(&self) -> &SpaceFn {
        &self.evaluate
    }

    /// Per-atom gradient values (finite base only).
    pub fn values(&self) -> Option<&[f64]> {
        self.evaluate.as_atoms()
    }

    /// `int k~^2 dP0`.
    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }

    /// `(int k~^2 dP0)^(1/2)`.
    pub fn norm(&self) -> f64 {
        self.norm_sq.sqrt()
    }

    pub fn base(&self) -> &Measure {
        &self.base
    }

    /// Sum of gradient evaluations over a sample, in observation order.
    pub fn score_sum(&self, obs: &Observations) -> f64 {
        self.evaluate.sum_over(obs)
    }

    /// The gradient rescaled by `c`; any positive rescaling represents the
    /// same functional direction and must not change test decisions.
    pub fn rescaled(&self, c: f64) -> Self {
        let evaluate = match &self.evaluate {
            SpaceFn::Atoms(v) => SpaceFn::Atoms(v.iter().map(|x| c * x).collect()),
            SpaceFn::Real(f) => {
                let f = Arc::clone(f);
                SpaceFn::Real(Arc::new(move |x| c * f(x)))
            }
        };
        Self {
            evaluate,
            norm_sq: c * c * self.norm_sq,
            base: self.base.clone(),
        }
    }
}

fn check_nondegenerate(norm_sq: f64) -> Result<f64, FunctionalError> {
    if norm_sq <= DEGENERACY_THRESHOLD {
        Err(FunctionalError::DegenerateGradient { norm_sq })
    } else {
        Ok(norm_sq)
    }
}

// ---------------------------------------------------------------------------
// von Mises functional
// ---------------------------------------------------------------------------

/// `k(P) = E_P[h]`.
pub fn von_mises_value(measure: &Measure, kernel: &SpaceFn) -> Result<f64, MeasureError> {
    measure.expect(kernel)
}

/// Canonical gradient of the von Mises functional: `h - E_{P0}[h]`, with
/// squared norm `Var_{P0}(h)`.
pub fn von_mises_gradient(
    base: &Measure,
    kernel: &SpaceFn,
) -> Result<CanonicalGradient, FunctionalError> {
    let mean = base.expect(kernel)?;
    let (evaluate, norm_sq) = match (base, kernel) {
        (Measure::Finite(m), SpaceFn::Atoms(h)) => {
            let centered: Vec<f64> = h.iter().map(|v| v - mean).collect();
            let norm_sq = centered
                .iter()
                .zip(m.probs())
                .fold(0.0, |acc, (v, p)| acc + v * v * p);
            (SpaceFn::Atoms(centered), norm_sq)
        }
        (Measure::Continuous(m), SpaceFn::Real(h)) => {
            let hc = Arc::clone(h);
            let centered = SpaceFn::Real(Arc::new(move |x| hc(x) - mean));
            let hv = Arc::clone(h);
            let norm_sq = m.expect(&move |x| {
                let v = hv(x) - mean;
                v * v
            })?;
            (centered, norm_sq)
        }
        _ => panic!("kernel kind does not match the measure kind"),
    };
    let norm_sq = check_nondegenerate(norm_sq)?;
    Ok(CanonicalGradient::new(evaluate, norm_sq, base.clone()))
}

// ---------------------------------------------------------------------------
// Median functional
// ---------------------------------------------------------------------------

/// `k(P) = med(P)` for a measure with connected support and positive density.
pub fn median_value(measure: &ContinuousMeasure) -> f64 {
    measure.quantile(0.5)
}

/// Canonical gradient of the median:
/// `k~(x) = (2 f(med))^{-1} sign(F(x) - 1/2)`, with squared norm
/// `(2 f(med))^{-2}` since `sign(..)^2 = 1` almost everywhere.
///
/// The density value at the median is analytic input; the caller is
/// responsible for the density being continuous near the median.
pub fn median_gradient(
    base: &ContinuousMeasure,
    density_at_median: f64,
) -> Result<CanonicalGradient, FunctionalError> {
    if density_at_median <= 0.0 {
        return Err(FunctionalError::NonpositiveDensity(density_at_median));
    }
    let scale = 1.0 / (2.0 * density_at_median);
    let cdf_measure = base.clone();
    let evaluate = SpaceFn::Real(Arc::new(move |x| scale * sign(cdf_measure.cdf(x) - 0.5)));
    let norm_sq = scale * scale;
    Ok(CanonicalGradient::new(
        evaluate,
        norm_sq,
        Measure::Continuous(base.clone()),
    ))
}

// ---------------------------------------------------------------------------
// Multinomial functional
// ---------------------------------------------------------------------------

/// `k(P) = f(p_1, ..., p_m)`.
pub fn multinomial_value(measure: &FiniteMeasure, f: impl Fn(&[f64]) -> f64) -> f64 {
    f(measure.probs())
}

/// Canonical gradient of a smooth multinomial functional with partial
/// derivatives `w` at the base probabilities: `k~(a_j) = w_j - sum_i w_i p_i`.
pub fn multinomial_gradient(
    base: &FiniteMeasure,
    weights: &[f64],
) -> Result<CanonicalGradient, FunctionalError> {
    if weights.len() != base.len() {
        return Err(FunctionalError::Measure(MeasureError::LengthMismatch {
            got: weights.len(),
            expected: base.len(),
        }));
    }
    let mean = base.expect_values(weights);
    let centered: Vec<f64> = weights.iter().map(|w| w - mean).collect();
    let norm_sq = centered
        .iter()
        .zip(base.probs())
        .fold(0.0, |acc, (v, p)| acc + v * v * p);
    let norm_sq = check_nondegenerate(norm_sq)?;
    Ok(CanonicalGradient::new(
        SpaceFn::Atoms(centered),
        norm_sq,
        Measure::Finite(base.clone()),
    ))
}

// ---------------------------------------------------------------------------
// Orthogonality
// ---------------------------------------------------------------------------

/// Inner product `int h k~ dP0` of a tangent with a canonical gradient.
///
/// Tangents with zero inner product span the directions along which the
/// functional does not move to first order; the caller compares the result
/// to zero to test membership.
pub fn orthogonality_check(
    tangent: &TangentFunction,
    grad: &CanonicalGradient,
) -> Result<f64, MeasureError> {
    crate::curves::gradient_inner_product(tangent, grad)
}
