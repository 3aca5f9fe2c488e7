//! Local perturbation curves around a base measure.
//!
//! A mean-zero, square-integrable tangent `g` generates the curve
//! `t -> P_tg` with `P0`-density `f_tg = c(tg)^{-1} (1 + t g / 2)^2` and
//! normalizer `c(tg) = 1 + (t^2/4) int g^2 dP0`. The density is a square, so
//! the curve is defined for every real `t`, stays absolutely continuous with
//! respect to `P0`, and has tangent `g` at `t = 0`. Local sequences evaluate
//! the curve at `t_n = t / sqrt(n)`.
//!
//! Rescaling a curve stores the factor lazily instead of premultiplying the
//! tangent values: the only place the factor enters any computation is the
//! product `t * scale`, which makes the reparametrization identity
//! `measure_at(scaled(a), t) == measure_at(curve, a * t)` hold bit-for-bit.

use serde::Serialize;
use thiserror::Error;

use crate::functionals::{CanonicalGradient, FunctionalError, FunctionalSpec};
use crate::measures::{
    adaptive_simpson, rng_from_seed, ContinuousMeasure, FiniteMeasure, Measure, MeasureError,
    Observations, Sample, SpaceFn, QUAD_MAX_DEPTH, QUAD_TOL,
};
use rand::RngExt;

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("operation requires a finite base measure")]
    FiniteBaseRequired,
    #[error("local scale t must be nonnegative, got {0}")]
    NegativeT(f64),
    #[error("verification requires strictly positive t values, got {0}")]
    NonpositiveT(f64),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Functional(#[from] FunctionalError),
}

// ---------------------------------------------------------------------------
// Tangent functions
// ---------------------------------------------------------------------------

/// A mean-zero score function on the sample space, centered against a base
/// measure. Continuous tangents must be bounded (the rejection sampler for
/// perturbed measures needs an envelope).
#[derive(Debug, Clone)]
pub struct TangentFunction {
    raw: SpaceFn,
    raw_norm_sq: f64,
    /// Bound on `sup |raw|`; present exactly when the base is continuous.
    sup_abs_raw: Option<f64>,
    scale: f64,
    base: Measure,
}

impl TangentFunction {
    /// Centers per-atom values against a finite base measure.
    pub fn centered(base: &FiniteMeasure, raw: &[f64]) -> Result<Self, CurveError> {
        if raw.len() != base.len() {
            return Err(MeasureError::LengthMismatch {
                got: raw.len(),
                expected: base.len(),
            }
            .into());
        }
        let mean = base.expect_values(raw);
        let centered: Vec<f64> = raw.iter().map(|v| v - mean).collect();
        let raw_norm_sq = centered
            .iter()
            .zip(base.probs())
            .fold(0.0, |acc, (v, p)| acc + v * v * p);
        Ok(Self {
            raw: SpaceFn::Atoms(centered),
            raw_norm_sq,
            sup_abs_raw: None,
            scale: 1.0,
            base: Measure::Finite(base.clone()),
        })
    }

    /// Wraps an already mean-zero bounded function with analytically known
    /// norm. Used for score functions whose moments are exact (for example
    /// sign-type tangents), where quadrature would only add error.
    pub fn precentered_continuous(
        base: &ContinuousMeasure,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        sup_abs: f64,
        norm_sq: f64,
    ) -> Self {
        assert!(sup_abs.is_finite() && sup_abs >= 0.0);
        Self {
            raw: SpaceFn::real(f),
            raw_norm_sq: norm_sq,
            sup_abs_raw: Some(sup_abs),
            scale: 1.0,
            base: Measure::Continuous(base.clone()),
        }
    }

    /// Centers a bounded function against a continuous base by quadrature.
    pub fn centered_continuous(
        base: &ContinuousMeasure,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        sup_abs: f64,
    ) -> Result<Self, CurveError> {
        let mean = base.expect(&f)?;
        let norm_sq = base.expect(&|x| {
            let v = f(x) - mean;
            v * v
        })?;
        Ok(Self {
            raw: SpaceFn::real(move |x| f(x) - mean),
            raw_norm_sq: norm_sq,
            sup_abs_raw: Some(sup_abs + mean.abs()),
            scale: 1.0,
            base: Measure::Continuous(base.clone()),
        })
    }

    /// The sign tangent `x -> magnitude * sign(F(x) - 1/2)`, mean-zero by
    /// construction with `int g^2 dP0 = magnitude^2`.
    pub fn sign_at_median(base: &ContinuousMeasure, magnitude: f64) -> Self {
        let m = base.clone();
        Self::precentered_continuous(
            base,
            move |x| magnitude * crate::functionals::sign(m.cdf(x) - 0.5),
            magnitude.abs(),
            magnitude * magnitude,
        )
    }

    /// The tangent multiplied by `a` (lazily, see the module docs).
    pub fn scaled(&self, a: f64) -> Self {
        Self {
            raw: self.raw.clone(),
            raw_norm_sq: self.raw_norm_sq,
            sup_abs_raw: self.sup_abs_raw,
            scale: self.scale * a,
            base: self.base.clone(),
        }
    }

    /// `int g^2 dP0`.
    pub fn norm_sq(&self) -> f64 {
        self.scale * self.scale * self.raw_norm_sq
    }

    pub fn base(&self) -> &Measure {
        &self.base
    }

    /// Per-atom tangent values including the scale factor (finite base only).
    pub fn values(&self) -> Option<Vec<f64>> {
        self.raw
            .as_atoms()
            .map(|v| v.iter().map(|x| self.scale * x).collect())
    }

    pub fn eval_real(&self, x: f64) -> f64 {
        self.scale * self.raw.eval_real(x)
    }

    pub fn eval_atom(&self, j: usize) -> f64 {
        self.scale * self.raw.eval_atom(j)
    }

    /// Sum of tangent evaluations over a sample (includes the scale).
    pub fn sum_over(&self, obs: &Observations) -> f64 {
        self.scale * self.raw.sum_over(obs)
    }

    pub(crate) fn raw(&self) -> &SpaceFn {
        &self.raw
    }

    pub(crate) fn scale(&self) -> f64 {
        self.scale
    }

    pub(crate) fn sup_abs_raw(&self) -> f64 {
        self.sup_abs_raw
            .expect("continuous tangent carries a bound by construction")
    }
}

/// `int g k~ dP0` for a tangent and a canonical gradient over the same base.
pub fn gradient_inner_product(
    tangent: &TangentFunction,
    grad: &CanonicalGradient,
) -> Result<f64, MeasureError> {
    Ok(tangent.scale() * raw_inner_product(tangent, grad)?)
}

fn raw_inner_product(
    tangent: &TangentFunction,
    grad: &CanonicalGradient,
) -> Result<f64, MeasureError> {
    match (&tangent.base, tangent.raw(), grad.evaluate()) {
        (Measure::Finite(m), SpaceFn::Atoms(g), SpaceFn::Atoms(k)) => {
            assert_eq!(g.len(), k.len(), "tangent and gradient atom counts");
            Ok(g.iter()
                .zip(k)
                .zip(m.probs())
                .fold(0.0, |acc, ((gj, kj), pj)| acc + gj * kj * pj))
        }
        (Measure::Continuous(m), SpaceFn::Real(g), SpaceFn::Real(k)) => {
            let g = g.clone();
            let k = k.clone();
            m.expect(&move |x| g(x) * k(x))
        }
        _ => panic!("tangent and gradient kinds do not match"),
    }
}

// ---------------------------------------------------------------------------
// Curves and perturbed measures
// ---------------------------------------------------------------------------

/// The perturbation curve `t -> P_tg` generated by a tangent.
#[derive(Debug, Clone)]
pub struct LocalCurve {
    tangent: TangentFunction,
}

impl LocalCurve {
    pub fn new(tangent: TangentFunction) -> Self {
        Self { tangent }
    }

    pub fn base(&self) -> &Measure {
        &self.tangent.base
    }

    pub fn tangent(&self) -> &TangentFunction {
        &self.tangent
    }

    /// The curve with tangent `a * g` over the same base;
    /// `measure_at(scaled(a), t)` equals `measure_at(self, a * t)` exactly.
    pub fn scaled(&self, a: f64) -> Self {
        Self {
            tangent: self.tangent.scaled(a),
        }
    }

    pub(crate) fn tau(&self, t: f64) -> f64 {
        t * self.tangent.scale
    }

    /// Normalizer `c(tg) = 1 + (t^2/4) int g^2 dP0 >= 1`.
    pub fn normalizer(&self, t: f64) -> f64 {
        let tau = self.tau(t);
        1.0 + tau * tau / 4.0 * self.tangent.raw_norm_sq
    }

    /// The measure at parameter `t`.
    ///
    /// Finite base: exact atom weights `q_j = p_j (1 + t g_j / 2)^2 / c(tg)`.
    /// Continuous base: a density ratio plus a rejection sampler whose
    /// envelope comes from the tangent bound. The perturbed density is a
    /// square, hence nonnegative for every real `t`.
    pub fn measure_at(&self, t: f64) -> MeasureAt {
        let tau = self.tau(t);
        if tau == 0.0 || self.tangent.raw_norm_sq == 0.0 {
            // f_0 = 1: the unperturbed (or constant) curve.
            return match &self.tangent.base {
                Measure::Finite(m) => MeasureAt::Finite(m.clone()),
                Measure::Continuous(m) => MeasureAt::Continuous(PerturbedContinuous {
                    base: m.clone(),
                    tangent: self.tangent.clone(),
                    tau: 0.0,
                    c: 1.0,
                    envelope: 1.0,
                }),
            };
        }
        let c = self.normalizer(t);
        match &self.tangent.base {
            Measure::Finite(m) => {
                let raw = self.tangent.raw.as_atoms().expect("finite tangent");
                let q: Vec<f64> = m
                    .probs()
                    .iter()
                    .zip(raw)
                    .map(|(p, r)| {
                        let s = 1.0 + tau * r / 2.0;
                        p * (s * s) / c
                    })
                    .collect();
                let perturbed = FiniteMeasure::new(m.atoms().to_vec(), q)
                    .expect("perturbed weights are a probability vector");
                MeasureAt::Finite(perturbed)
            }
            Measure::Continuous(m) => {
                let s = 1.0 + tau.abs() * self.tangent.sup_abs_raw() / 2.0;
                MeasureAt::Continuous(PerturbedContinuous {
                    base: m.clone(),
                    tangent: self.tangent.clone(),
                    tau,
                    c,
                    envelope: (s * s) / c,
                })
            }
        }
    }
}

/// The measure a curve passes through at a given parameter.
#[derive(Debug, Clone)]
pub enum MeasureAt {
    Finite(FiniteMeasure),
    Continuous(PerturbedContinuous),
}

impl MeasureAt {
    pub fn as_finite(&self) -> Option<&FiniteMeasure> {
        match self {
            MeasureAt::Finite(m) => Some(m),
            MeasureAt::Continuous(_) => None,
        }
    }

    pub fn draw(&self, n: usize, seed: u64) -> Sample {
        match self {
            MeasureAt::Finite(m) => m.draw(n, seed),
            MeasureAt::Continuous(m) => m.draw(n, seed),
        }
    }
}

/// A perturbed continuous measure, represented by its density ratio against
/// the base together with a rejection sampler.
#[derive(Debug, Clone)]
pub struct PerturbedContinuous {
    base: ContinuousMeasure,
    tangent: TangentFunction,
    tau: f64,
    c: f64,
    envelope: f64,
}

impl PerturbedContinuous {
    /// `dP_t / dP0` at `x`.
    pub fn density_ratio(&self, x: f64) -> f64 {
        let s = 1.0 + self.tau * self.tangent.raw.eval_real(x) / 2.0;
        (s * s) / self.c
    }

    /// `log dP_t/dP0` at `x`; negative infinity on the ratio's zero set.
    pub fn log_density_ratio(&self, x: f64) -> f64 {
        let s = 1.0 + self.tau * self.tangent.raw.eval_real(x) / 2.0;
        if s == 0.0 {
            f64::NEG_INFINITY
        } else {
            2.0 * s.abs().ln() - self.c.ln()
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.density_ratio(x) * self.base.pdf(x)
    }

    pub fn base(&self) -> &ContinuousMeasure {
        &self.base
    }

    /// CDF by quadrature of the perturbed density.
    pub fn cdf_numeric(&self, x: f64) -> Result<f64, MeasureError> {
        let (lo, hi) = self.base.support();
        if x <= lo {
            return Ok(0.0);
        }
        let upper = x.min(hi);
        adaptive_simpson(&|u| self.pdf(u), lo, upper, QUAD_TOL, QUAD_MAX_DEPTH)
    }

    /// Rejection sampling with the base as proposal: accept `x` with
    /// probability `density_ratio(x) / envelope`.
    pub fn draw(&self, n: usize, seed: u64) -> Sample {
        assert!(n >= 1, "sample size must be at least 1");
        let mut rng = rng_from_seed(seed);
        let mut values = Vec::with_capacity(n);
        while values.len() < n {
            let x = self.base.quantile(rng.random());
            let u: f64 = rng.random();
            if u * self.envelope <= self.density_ratio(x) {
                values.push(x);
            }
        }
        Sample {
            obs: Observations::Reals(values),
            seed,
        }
    }
}

// ---------------------------------------------------------------------------
// Local sequences
// ---------------------------------------------------------------------------

/// The local sequence `P_{t/sqrt(n)}` along a curve.
#[derive(Debug, Clone)]
pub struct LocalSequence {
    curve: LocalCurve,
    t: f64,
}

impl LocalSequence {
    pub fn new(curve: LocalCurve, t: f64) -> Result<Self, CurveError> {
        if !(t >= 0.0) {
            return Err(CurveError::NegativeT(t));
        }
        Ok(Self { curve, t })
    }

    pub fn curve(&self) -> &LocalCurve {
        &self.curve
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn t_at(&self, n: usize) -> f64 {
        self.t / (n as f64).sqrt()
    }

    pub fn measure_at_n(&self, n: usize) -> MeasureAt {
        self.curve.measure_at(self.t_at(n))
    }

    /// The local parameter `theta = t int g k~ dP0`.
    ///
    /// Its sign classifies the sequence: positive values are one-sided
    /// implicit alternatives, zero is an implicit hypothesis for the
    /// two-sided problem, nonzero values are two-sided implicit alternatives.
    pub fn local_parameter(&self, grad: &CanonicalGradient) -> Result<f64, MeasureError> {
        let tau = self.curve.tau(self.t);
        Ok(tau * raw_inner_product(&self.curve.tangent, grad)?)
    }
}

// ---------------------------------------------------------------------------
// Differentiability verification
// ---------------------------------------------------------------------------

/// Residuals of the quadratic-mean differentiability limit at a grid of
/// parameter values.
#[derive(Debug, Clone, Serialize)]
pub struct L2Report {
    pub rows: Vec<L2Row>,
    /// Largest observed `residual / t`; the residuals fit `residual <= C t`.
    pub fitted_slope: f64,
    pub monotone_decreasing: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct L2Row {
    pub t: f64,
    pub residual: f64,
}

/// Exact evaluation of the L2 differentiability residual
/// `|| (2/t) (sqrt(dP_t/dP0) - 1) - g ||_{L2(P0)}` on a finite support, for
/// each `t` in a shrinking grid.
pub fn verify_l2_differentiability(
    curve: &LocalCurve,
    ts: &[f64],
) -> Result<L2Report, CurveError> {
    let base = match curve.base() {
        Measure::Finite(m) => m.clone(),
        Measure::Continuous(_) => return Err(CurveError::FiniteBaseRequired),
    };
    let raw = curve
        .tangent()
        .raw()
        .as_atoms()
        .expect("finite tangent")
        .to_vec();
    let scale = curve.tangent().scale();

    let mut rows = Vec::with_capacity(ts.len());
    for &t in ts {
        if !(t > 0.0) {
            return Err(CurveError::NonpositiveT(t));
        }
        let tau = curve.tau(t);
        let sqrt_c = curve.normalizer(t).sqrt();
        let sum = base
            .probs()
            .iter()
            .zip(&raw)
            .fold(0.0, |acc, (p, r)| {
                let sqrt_ratio = (1.0 + tau * r / 2.0).abs() / sqrt_c;
                let d = 2.0 / t * (sqrt_ratio - 1.0) - scale * r;
                acc + p * d * d
            });
        rows.push(L2Row {
            t,
            residual: sum.sqrt(),
        });
    }
    Ok(L2Report {
        fitted_slope: fitted_slope(rows.iter().map(|r| (r.t, r.residual))),
        monotone_decreasing: monotone_decreasing(rows.iter().map(|r| (r.t, r.residual))),
        rows,
    })
}

/// One-sided difference quotients of a functional along a curve, compared
/// against the limit `int k~ g dP0`.
#[derive(Debug, Clone, Serialize)]
pub struct DerivativeReport {
    /// The derivative target `int k~ g dP0`.
    pub target: f64,
    pub rows: Vec<DerivativeRow>,
    /// Largest observed `|slope - target| / t`.
    pub fitted_slope: f64,
    pub monotone_decreasing: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DerivativeRow {
    pub t: f64,
    pub slope: f64,
    pub abs_error: f64,
}

/// Difference quotients `(k(P_t) - k(P0)) / t` at each grid value; their
/// errors against the target fit `error <= C t`.
///
/// Negative `t` values are allowed and probe the left-sided quotient.
pub fn verify_functional_derivative(
    curve: &LocalCurve,
    spec: &FunctionalSpec,
    grad: &CanonicalGradient,
    ts: &[f64],
) -> Result<DerivativeReport, CurveError> {
    let target = gradient_inner_product(curve.tangent(), grad)?;
    let k0 = spec.value(curve.base())?;
    let mut rows = Vec::with_capacity(ts.len());
    for &t in ts {
        if t == 0.0 {
            return Err(CurveError::NonpositiveT(t));
        }
        let kt = functional_value_at(spec, &curve.measure_at(t))?;
        let slope = (kt - k0) / t;
        rows.push(DerivativeRow {
            t,
            slope,
            abs_error: (slope - target).abs(),
        });
    }
    Ok(DerivativeReport {
        target,
        fitted_slope: fitted_slope(rows.iter().map(|r| (r.t, r.abs_error))),
        monotone_decreasing: monotone_decreasing(rows.iter().map(|r| (r.t, r.abs_error))),
        rows,
    })
}

fn fitted_slope(rows: impl Iterator<Item = (f64, f64)>) -> f64 {
    rows.map(|(t, v)| v / t.abs())
        .fold(0.0_f64, |acc, r| acc.max(r))
}

fn monotone_decreasing(rows: impl Iterator<Item = (f64, f64)>) -> bool {
    let vals: Vec<(f64, f64)> = rows.collect();
    let mut sorted = vals.clone();
    sorted.sort_by(|a, b| b.0.abs().partial_cmp(&a.0.abs()).unwrap());
    sorted.windows(2).all(|w| w[1].1 < w[0].1 || w[0].1 == 0.0)
}

/// The functional's value at a point of a curve.
pub fn functional_value_at(
    spec: &FunctionalSpec,
    measure: &MeasureAt,
) -> Result<f64, CurveError> {
    match (spec, measure) {
        (FunctionalSpec::VonMises { kernel }, MeasureAt::Finite(m)) => {
            Ok(m.expect_values(kernel.as_atoms().expect("finite kernel")))
        }
        (FunctionalSpec::VonMises { kernel }, MeasureAt::Continuous(p)) => {
            let kernel = match kernel {
                SpaceFn::Real(f) => f.clone(),
                SpaceFn::Atoms(_) => panic!("kernel kind does not match the measure kind"),
            };
            let base = p.base().clone();
            let p = p.clone();
            Ok(base.expect(&move |x| kernel(x) * p.density_ratio(x))?)
        }
        (FunctionalSpec::MultinomialSmooth { f, .. }, MeasureAt::Finite(m)) => Ok(f(m.probs())),
        (FunctionalSpec::Median { .. }, MeasureAt::Continuous(p)) => perturbed_median(p),
        (FunctionalSpec::Median { .. }, MeasureAt::Finite(_)) => {
            Err(CurveError::FiniteBaseRequired)
        }
        (FunctionalSpec::MultinomialSmooth { .. }, MeasureAt::Continuous(_)) => {
            Err(CurveError::FiniteBaseRequired)
        }
    }
}

/// Median of a perturbed continuous measure by bisection on the numeric CDF.
fn perturbed_median(p: &PerturbedContinuous) -> Result<f64, CurveError> {
    let (mut lo, mut hi) = p.base().support();
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if p.cdf_numeric(mid)? < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-11 * (1.0 + mid.abs()) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
