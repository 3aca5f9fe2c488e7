//! Efficient one-sample score tests for differentiable statistical
//! functionals, together with the machinery needed to verify their local
//! asymptotic behavior by exact computation and Monte Carlo simulation.
//!
//! The pieces fit together as follows. A [`measures::Measure`] fixes the
//! model; a [`functionals::FunctionalSpec`] picks the quantity under test and
//! yields its [`functionals::CanonicalGradient`]. A mean-zero
//! [`curves::TangentFunction`] generates the perturbation curve
//! `t -> P_tg`, whose local sequences `P_{t/sqrt(n)}` classify into implicit
//! hypotheses and alternatives through the local parameter
//! `theta = t int g k~ dP0`. The [`testing`] module runs the one- and
//! two-sided score tests and evaluates their limiting power
//! `Phi(theta/||k~|| - u)`; [`lan`] measures the log-likelihood expansion and
//! the shifted normal limit of the statistic; [`mc`] compares empirical
//! rejection rates against the power formula with fully reproducible seeding.
//!
//! ```
//! use functest::curves::{LocalCurve, TangentFunction};
//! use functest::functionals::multinomial_gradient;
//! use functest::measures::FiniteMeasure;
//! use functest::mc::rejection_rate;
//! use functest::testing::TestConfig;
//!
//! let base = FiniteMeasure::uniform(3);
//! let gradient = multinomial_gradient(&base, &[1.0, 0.0, 0.0]).unwrap();
//! let tangent = TangentFunction::centered(&base, &[1.0, -1.0, 0.0]).unwrap();
//! let curve = LocalCurve::new(tangent);
//! let config = TestConfig::one_sided(0.05).unwrap();
//!
//! let report = rejection_rate(&curve, &gradient, &config, 2.0, 500, 400, 7).unwrap();
//! assert!((report.theta - 2.0 / 3.0).abs() < 1e-12);
//! assert!(report.empirical_rate > 0.2 && report.empirical_rate < 0.6);
//! ```

// Negated comparisons like `!(x >= 0.0)` reject NaN inputs; the suggested
// rewrites would let NaN through validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod curves;
pub mod functionals;
pub mod lan;
pub mod mc;
pub mod measures;
pub mod testing;
