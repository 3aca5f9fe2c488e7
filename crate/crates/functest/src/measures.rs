//! Probability-measure representations, sampling, expectations, and distances.
//!
//! Finite measures are the exact-computation backbone: every expectation on a
//! finite support is a plain weighted sum, so theoretical identities can be
//! checked without quadrature error. Continuous measures carry pdf/cdf/quantile
//! closures and exist to support functionals of real-valued distributions
//! (notably the median).

use std::fmt;
use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute per-interval tolerance for adaptive Simpson quadrature.
pub const QUAD_TOL: f64 = 1e-9;
/// Maximum bisection depth for adaptive Simpson quadrature.
pub const QUAD_MAX_DEPTH: u32 = 40;

/// Tolerated drift of a probability vector's sum away from one at construction.
const MASS_DRIFT_TOL: f64 = 1e-9;
/// Largest product-space size enumerated by [`variational_distance_product`].
const ENUMERATION_LIMIT: f64 = 1e7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("negative probability {prob} at index {index}")]
    NegativeProbability { index: usize, prob: f64 },
    #[error("probabilities sum to {sum}, which is not 1 within {MASS_DRIFT_TOL:e}")]
    MassNotOne { sum: f64 },
    #[error("duplicate atom label `{label}`")]
    DuplicateAtom { label: String },
    #[error("length mismatch: {got} values for {expected} atoms")]
    LengthMismatch { got: usize, expected: usize },
    #[error("measures are defined on different atom lists")]
    SupportMismatch,
    #[error("product space has {states:e} states, above the enumeration limit {ENUMERATION_LIMIT:e}")]
    EnumerationTooLarge { states: f64 },
    #[error("adaptive quadrature did not converge within depth {QUAD_MAX_DEPTH}")]
    QuadratureNonConvergence,
}

/// Deterministic generator used for every random draw in the crate.
pub(crate) fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Finite measures
// ---------------------------------------------------------------------------

/// A probability measure on a finite set of labelled atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFiniteMeasure")]
pub struct FiniteMeasure {
    atoms: Vec<String>,
    probs: Vec<f64>,
}

#[derive(Deserialize)]
struct RawFiniteMeasure {
    atoms: Vec<String>,
    probs: Vec<f64>,
}

impl TryFrom<RawFiniteMeasure> for FiniteMeasure {
    type Error = MeasureError;

    fn try_from(raw: RawFiniteMeasure) -> Result<Self, MeasureError> {
        FiniteMeasure::new(raw.atoms, raw.probs)
    }
}

impl FiniteMeasure {
    /// Builds a finite measure, renormalizing the weights to sum to one.
    ///
    /// Weights may drift from unit mass by at most `1e-9` (config-file
    /// rounding); larger drift is rejected as [`MeasureError::MassNotOne`].
    pub fn new(atoms: Vec<String>, probs: Vec<f64>) -> Result<Self, MeasureError> {
        if atoms.len() != probs.len() {
            return Err(MeasureError::LengthMismatch {
                got: probs.len(),
                expected: atoms.len(),
            });
        }
        for (index, &prob) in probs.iter().enumerate() {
            if !(prob >= 0.0) {
                return Err(MeasureError::NegativeProbability { index, prob });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > MASS_DRIFT_TOL {
            return Err(MeasureError::MassNotOne { sum });
        }
        for (i, a) in atoms.iter().enumerate() {
            if atoms[..i].contains(a) {
                return Err(MeasureError::DuplicateAtom { label: a.clone() });
            }
        }
        // Skip the division when the mass is already exact so that clean
        // inputs round-trip bit-for-bit.
        let probs = if sum == 1.0 {
            probs
        } else {
            probs.iter().map(|p| p / sum).collect()
        };
        Ok(Self { atoms, probs })
    }

    /// The uniform measure on `m` atoms labelled `a1..am`.
    pub fn uniform(m: usize) -> Self {
        let atoms = (1..=m).map(|i| format!("a{i}")).collect();
        let probs = vec![1.0 / m as f64; m];
        Self::new(atoms, probs).expect("uniform weights are valid")
    }

    pub fn atoms(&self) -> &[String] {
        &self.atoms
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.atoms.iter().position(|a| a == label)
    }

    /// Exact expectation of per-atom values: `sum f(a_j) p_j` in index order.
    pub fn expect_values(&self, values: &[f64]) -> f64 {
        assert_eq!(values.len(), self.probs.len(), "value vector length");
        values
            .iter()
            .zip(&self.probs)
            .fold(0.0, |acc, (v, p)| acc + v * p)
    }

    /// Draws `n` i.i.d. atoms by inverse CDF over the cumulative weights.
    ///
    /// A uniform variate `u` selects the smallest index `j` with
    /// `u < cum[j]` (strict inequality, ties toward the lower index), so the
    /// draw is fully determined by `(measure, n, seed)`.
    pub fn draw(&self, n: usize, seed: u64) -> Sample {
        assert!(n >= 1, "sample size must be at least 1");
        let cum = self.cumulative();
        let mut rng = rng_from_seed(seed);
        let values = (0..n).map(|_| draw_index(&cum, rng.random())).collect();
        Sample {
            obs: Observations::Atoms(values),
            seed,
        }
    }

    pub(crate) fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect()
    }
}

pub(crate) fn draw_index(cum: &[f64], u: f64) -> usize {
    cum.iter()
        .position(|&c| u < c)
        .unwrap_or(cum.len().saturating_sub(1))
}

// ---------------------------------------------------------------------------
// Continuous measures
// ---------------------------------------------------------------------------

pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A probability measure on an interval, given by closed-form
/// pdf/cdf/quantile. Samples are produced by the quantile transform.
#[derive(Clone)]
pub struct ContinuousMeasure {
    pdf: RealFn,
    cdf: RealFn,
    quantile: RealFn,
    support: (f64, f64),
}

impl fmt::Debug for ContinuousMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContinuousMeasure")
            .field("support", &self.support)
            .finish_non_exhaustive()
    }
}

impl ContinuousMeasure {
    /// Builds a measure from its density, distribution function, and quantile
    /// function. `support` is also the window used for quadrature; any pdf
    /// mass outside it must be negligible at the quadrature tolerance.
    pub fn new(
        pdf: impl Fn(f64) -> f64 + Send + Sync + 'static,
        cdf: impl Fn(f64) -> f64 + Send + Sync + 'static,
        quantile: impl Fn(f64) -> f64 + Send + Sync + 'static,
        support: (f64, f64),
    ) -> Self {
        assert!(support.0 < support.1, "support must be a nonempty interval");
        Self {
            pdf: Arc::new(pdf),
            cdf: Arc::new(cdf),
            quantile: Arc::new(quantile),
            support,
        }
    }

    /// Uniform distribution on `(lo, hi)`.
    pub fn uniform(lo: f64, hi: f64) -> Self {
        assert!(lo < hi);
        let w = hi - lo;
        Self::new(
            move |x| if (lo..=hi).contains(&x) { 1.0 / w } else { 0.0 },
            move |x| ((x - lo) / w).clamp(0.0, 1.0),
            move |u| lo + u * w,
            (lo, hi),
        )
    }

    /// Exponential distribution with the given rate.
    ///
    /// The quadrature window is truncated where the tail mass drops below
    /// machine precision.
    pub fn exponential(rate: f64) -> Self {
        assert!(rate > 0.0);
        Self::new(
            move |x| if x >= 0.0 { rate * (-rate * x).exp() } else { 0.0 },
            move |x| if x >= 0.0 { 1.0 - (-rate * x).exp() } else { 0.0 },
            move |u| -(1.0 - u).ln() / rate,
            (0.0, 46.0 / rate),
        )
    }

    pub fn pdf(&self, x: f64) -> f64 {
        (self.pdf)(x)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        (self.cdf)(x)
    }

    pub fn quantile(&self, u: f64) -> f64 {
        (self.quantile)(u)
    }

    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    /// `E[f(X)]` by adaptive quadrature of `f * pdf` over the support window.
    pub fn expect(&self, f: &dyn Fn(f64) -> f64) -> Result<f64, MeasureError> {
        let pdf = Arc::clone(&self.pdf);
        adaptive_simpson(
            &|x| f(x) * pdf(x),
            self.support.0,
            self.support.1,
            QUAD_TOL,
            QUAD_MAX_DEPTH,
        )
    }

    /// Draws `n` i.i.d. reals via the quantile transform of uniform variates.
    pub fn draw(&self, n: usize, seed: u64) -> Sample {
        assert!(n >= 1, "sample size must be at least 1");
        let mut rng = rng_from_seed(seed);
        let values = (0..n).map(|_| (self.quantile)(rng.random())).collect();
        Sample {
            obs: Observations::Reals(values),
            seed,
        }
    }
}

// ---------------------------------------------------------------------------
// Unified measure and samples
// ---------------------------------------------------------------------------

/// Either kind of base measure.
#[derive(Debug, Clone)]
pub enum Measure {
    Finite(FiniteMeasure),
    Continuous(ContinuousMeasure),
}

impl Measure {
    pub fn as_finite(&self) -> Option<&FiniteMeasure> {
        match self {
            Measure::Finite(m) => Some(m),
            Measure::Continuous(_) => None,
        }
    }

    pub fn as_continuous(&self) -> Option<&ContinuousMeasure> {
        match self {
            Measure::Finite(_) => None,
            Measure::Continuous(m) => Some(m),
        }
    }

    pub fn draw(&self, n: usize, seed: u64) -> Sample {
        match self {
            Measure::Finite(m) => m.draw(n, seed),
            Measure::Continuous(m) => m.draw(n, seed),
        }
    }

    /// Expectation of a sample-space function under this measure.
    ///
    /// Exact for finite measures; adaptive quadrature otherwise. Panics if
    /// the function kind does not match the measure kind.
    pub fn expect(&self, f: &SpaceFn) -> Result<f64, MeasureError> {
        match (self, f) {
            (Measure::Finite(m), SpaceFn::Atoms(v)) => {
                if v.len() != m.len() {
                    return Err(MeasureError::LengthMismatch {
                        got: v.len(),
                        expected: m.len(),
                    });
                }
                Ok(m.expect_values(v))
            }
            (Measure::Continuous(m), SpaceFn::Real(f)) => m.expect(&**f),
            _ => panic!("sample-space function does not match the measure kind"),
        }
    }
}

impl From<FiniteMeasure> for Measure {
    fn from(m: FiniteMeasure) -> Self {
        Measure::Finite(m)
    }
}

impl From<ContinuousMeasure> for Measure {
    fn from(m: ContinuousMeasure) -> Self {
        Measure::Continuous(m)
    }
}

/// Observations drawn from a measure: atom indices or reals.
#[derive(Debug, Clone, PartialEq)]
pub enum Observations {
    Atoms(Vec<usize>),
    Reals(Vec<f64>),
}

impl Observations {
    pub fn len(&self) -> usize {
        match self {
            Observations::Atoms(v) => v.len(),
            Observations::Reals(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An i.i.d. sample together with the seed that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub obs: Observations,
    pub seed: u64,
}

impl Sample {
    pub fn n(&self) -> usize {
        self.obs.len()
    }
}

/// A real-valued function on the sample space.
#[derive(Clone)]
pub enum SpaceFn {
    /// Per-atom values on a finite support.
    Atoms(Vec<f64>),
    /// A function of a real observation.
    Real(RealFn),
}

impl fmt::Debug for SpaceFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpaceFn::Atoms(v) => f.debug_tuple("Atoms").field(v).finish(),
            SpaceFn::Real(_) => f.write_str("Real(..)"),
        }
    }
}

impl SpaceFn {
    pub fn atoms(values: Vec<f64>) -> Self {
        SpaceFn::Atoms(values)
    }

    pub fn real(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        SpaceFn::Real(Arc::new(f))
    }

    pub fn constant(c: f64) -> Self {
        SpaceFn::Real(Arc::new(move |_| c))
    }

    pub fn as_atoms(&self) -> Option<&[f64]> {
        match self {
            SpaceFn::Atoms(v) => Some(v),
            SpaceFn::Real(_) => None,
        }
    }

    pub fn eval_atom(&self, index: usize) -> f64 {
        match self {
            SpaceFn::Atoms(v) => v[index],
            SpaceFn::Real(_) => panic!("atom evaluation of a real-valued function"),
        }
    }

    pub fn eval_real(&self, x: f64) -> f64 {
        match self {
            SpaceFn::Real(f) => f(x),
            SpaceFn::Atoms(_) => panic!("real evaluation of a per-atom function"),
        }
    }

    /// Sum of the function over the observations, in observation order.
    pub fn sum_over(&self, obs: &Observations) -> f64 {
        match (self, obs) {
            (SpaceFn::Atoms(v), Observations::Atoms(idx)) => {
                idx.iter().fold(0.0, |acc, &j| acc + v[j])
            }
            (SpaceFn::Real(f), Observations::Reals(xs)) => {
                xs.iter().fold(0.0, |acc, &x| acc + f(x))
            }
            _ => panic!("sample-space function does not match the observation kind"),
        }
    }
}

// ---------------------------------------------------------------------------
// Distances
// ---------------------------------------------------------------------------

/// Hellinger distance `(1/2 sum (sqrt(p_j) - sqrt(q_j))^2)^(1/2)`.
pub fn hellinger_distance(p: &FiniteMeasure, q: &FiniteMeasure) -> Result<f64, MeasureError> {
    if p.atoms != q.atoms {
        return Err(MeasureError::SupportMismatch);
    }
    let sum: f64 = p
        .probs
        .iter()
        .zip(&q.probs)
        .map(|(a, b)| {
            let d = a.sqrt() - b.sqrt();
            d * d
        })
        .sum();
    Ok((sum / 2.0).sqrt())
}

/// Total-variation distance between the n-fold product measures `P^n` and
/// `Q^n`, by full enumeration of the product space.
///
/// Guarded by an `m^n <= 1e7` state limit; this is a brute-force reference,
/// not an efficient algorithm.
pub fn variational_distance_product(
    p: &FiniteMeasure,
    q: &FiniteMeasure,
    n: usize,
) -> Result<f64, MeasureError> {
    if p.atoms != q.atoms {
        return Err(MeasureError::SupportMismatch);
    }
    assert!(n >= 1, "product of at least one factor");
    let m = p.len();
    let states = (m as f64).powi(n as i32);
    if states > ENUMERATION_LIMIT {
        return Err(MeasureError::EnumerationTooLarge { states });
    }

    fn walk(pp: &[f64], qq: &[f64], level: usize, acc_p: f64, acc_q: f64, total: &mut f64) {
        if level == 0 {
            *total += (acc_p - acc_q).abs();
            return;
        }
        for j in 0..pp.len() {
            walk(pp, qq, level - 1, acc_p * pp[j], acc_q * qq[j], total);
        }
    }

    let mut total = 0.0;
    walk(&p.probs, &q.probs, n, 1.0, 1.0, &mut total);
    Ok(total / 2.0)
}

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

/// Adaptive Simpson integration of `f` over `[a, b]`.
///
/// The acceptance test uses a constant per-interval tolerance rather than the
/// halving scheme, which lets integrands with a jump discontinuity terminate
/// within the depth limit; total error stays a small multiple of `tol`.
pub fn adaptive_simpson(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    tol: f64,
    max_depth: u32,
) -> Result<f64, MeasureError> {
    fn simpson(h: f64, fa: f64, fm: f64, fb: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Result<f64, MeasureError> {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(m - a, fa, flm, fm);
        let right = simpson(b - m, fm, frm, fb);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol {
            return Ok(left + right + delta / 15.0);
        }
        if depth == 0 {
            return Err(MeasureError::QuadratureNonConvergence);
        }
        let l = recurse(f, a, fa, m, fm, flm, left, tol, depth - 1)?;
        let r = recurse(f, m, fm, b, fb, frm, right, tol, depth - 1)?;
        Ok(l + r)
    }

    assert!(a < b, "integration interval must be nonempty");
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(b - a, fa, fm, fb);
    recurse(f, a, fa, b, fb, fm, whole, tol, max_depth)
}
