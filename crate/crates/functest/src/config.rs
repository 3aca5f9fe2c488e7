//! Experiment configuration: a single JSON schema shared by every CLI
//! subcommand, validated up front into model objects.

use serde::{Deserialize, Serialize};

use crate::curves::{LocalCurve, TangentFunction};
use crate::functionals::{CanonicalGradient, FunctionalError, FunctionalSpec};
use crate::measures::{ContinuousMeasure, FiniteMeasure, Measure, SpaceFn};
use crate::testing::{NormSource, Sidedness, TestConfig};

/// Raw experiment configuration as parsed from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub measure: MeasureSpec,
    pub functional: FunctionalField,
    #[serde(default)]
    pub tangent: Option<TangentSpec>,
    pub test: TestField,
    #[serde(default)]
    pub simulation: Option<SimulationSpec>,
    #[serde(default)]
    pub output: OutputSpec,
    /// Level of the KS gate used by `lan-check` (one of 0.10, 0.05, 0.01).
    #[serde(default = "default_gate_level")]
    pub lan_gate_level: f64,
}

fn default_gate_level() -> f64 {
    0.01
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeasureSpec {
    Finite { atoms: Vec<String>, probs: Vec<f64> },
    Uniform { uniform: (f64, f64) },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionalField {
    VonMises { h: Vec<f64> },
    Median { f_at_median: f64 },
    Multinomial { weights: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TangentSpec {
    /// Per-atom raw values, centered automatically against the base.
    Values(Vec<f64>),
    /// `g(x) = magnitude * sign(F(x) - 1/2)` on a continuous base.
    SignAtMedian { sign_magnitude: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestField {
    pub alpha: f64,
    pub sidedness: Sidedness,
    #[serde(default = "default_norm_source")]
    pub norm_source: NormSource,
}

fn default_norm_source() -> NormSource {
    NormSource::Exact
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationSpec {
    #[serde(default)]
    pub t: Option<f64>,
    #[serde(default)]
    pub t_grid: Option<Vec<f64>>,
    pub n: usize,
    pub replicates: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OutputSpec {
    #[serde(default)]
    pub csv_path: Option<String>,
    #[serde(default)]
    pub json_path: Option<String>,
}

/// A validation failure (bad shape, mismatched sizes, out-of-range scalars).
#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error("invalid config: {0}")]
    Invalid(String),
    /// The model itself is degenerate (vanishing gradient, zero density).
    #[error("degenerate model: {0}")]
    Degenerate(#[source] FunctionalError),
}

fn invalid(msg: impl Into<String>) -> BuildError {
    BuildError::Invalid(msg.into())
}

/// Fully validated experiment: model objects ready for dispatch.
#[derive(Debug)]
pub struct Experiment {
    pub measure: Measure,
    pub functional: FunctionalSpec,
    pub gradient: CanonicalGradient,
    pub curve: Option<LocalCurve>,
    pub test: TestConfig,
    pub simulation: Option<SimulationSpec>,
    pub output: OutputSpec,
    pub lan_gate_level: f64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Validates every cross-reference and builds the model objects.
    pub fn build(&self) -> Result<Experiment, BuildError> {
        let measure = match &self.measure {
            MeasureSpec::Finite { atoms, probs } => Measure::Finite(
                FiniteMeasure::new(atoms.clone(), probs.clone())
                    .map_err(|e| invalid(format!("measure: {e}")))?,
            ),
            MeasureSpec::Uniform { uniform: (lo, hi) } => {
                if !(lo < hi) {
                    return Err(invalid(format!("measure: empty interval ({lo}, {hi})")));
                }
                Measure::Continuous(ContinuousMeasure::uniform(*lo, *hi))
            }
        };

        let functional = match &self.functional {
            FunctionalField::VonMises { h } => {
                let m = measure
                    .as_finite()
                    .ok_or_else(|| invalid("von_mises functional needs a finite measure"))?;
                if h.len() != m.len() {
                    return Err(invalid(format!(
                        "kernel has {} values for {} atoms",
                        h.len(),
                        m.len()
                    )));
                }
                FunctionalSpec::von_mises(SpaceFn::atoms(h.clone()))
            }
            FunctionalField::Median { f_at_median } => {
                if measure.as_continuous().is_none() {
                    return Err(invalid("median functional needs a continuous measure"));
                }
                FunctionalSpec::median(*f_at_median)
            }
            FunctionalField::Multinomial { weights } => {
                let m = measure
                    .as_finite()
                    .ok_or_else(|| invalid("multinomial functional needs a finite measure"))?;
                if weights.len() != m.len() {
                    return Err(invalid(format!(
                        "{} weights for {} atoms",
                        weights.len(),
                        m.len()
                    )));
                }
                FunctionalSpec::multinomial_linear(weights.clone())
            }
        };

        let gradient = functional
            .gradient(&measure)
            .map_err(BuildError::Degenerate)?;

        let curve = match &self.tangent {
            None => None,
            Some(TangentSpec::Values(values)) => {
                let m = measure
                    .as_finite()
                    .ok_or_else(|| invalid("per-atom tangent needs a finite measure"))?;
                let tangent = TangentFunction::centered(m, values)
                    .map_err(|e| invalid(format!("tangent: {e}")))?;
                Some(LocalCurve::new(tangent))
            }
            Some(TangentSpec::SignAtMedian { sign_magnitude }) => {
                let m = measure
                    .as_continuous()
                    .ok_or_else(|| invalid("sign tangent needs a continuous measure"))?;
                Some(LocalCurve::new(TangentFunction::sign_at_median(
                    m,
                    *sign_magnitude,
                )))
            }
        };

        let test = TestConfig::new(self.test.alpha, self.test.sidedness, self.test.norm_source)
            .map_err(|e| invalid(e.to_string()))?;

        if let Some(sim) = &self.simulation {
            if sim.n == 0 {
                return Err(invalid("simulation.n must be at least 1"));
            }
            if sim.replicates < crate::mc::MIN_REPLICATES {
                return Err(invalid(format!(
                    "simulation.replicates must be at least {}, got {}",
                    crate::mc::MIN_REPLICATES,
                    sim.replicates
                )));
            }
            if let Some(grid) = &sim.t_grid {
                if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(invalid("simulation.t_grid must be strictly increasing"));
                }
            }
            if let Some(t) = sim.t {
                if !(t >= 0.0) {
                    return Err(invalid(format!("simulation.t must be nonnegative, got {t}")));
                }
            }
        }

        if crate::lan::ks_critical_coefficient(self.lan_gate_level).is_none() {
            return Err(invalid(format!(
                "lan_gate_level must be one of 0.10, 0.05, 0.01; got {}",
                self.lan_gate_level
            )));
        }

        Ok(Experiment {
            measure,
            functional,
            gradient,
            curve,
            test,
            simulation: self.simulation.clone(),
            output: self.output.clone(),
            lan_gate_level: self.lan_gate_level,
        })
    }
}
