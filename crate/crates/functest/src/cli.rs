//! Command-line front end: config parsing, dispatch, and report emission.
//!
//! Exit codes are a stable contract:
//! 0 success, 1 unexpected I/O failure, 2 config or validation error,
//! 3 degenerate model, 4 data error, 5 diagnostic gate failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{BuildError, Experiment, ExperimentConfig, SimulationSpec};
use crate::curves::{verify_functional_derivative, verify_l2_differentiability};
use crate::functionals::FunctionalSpec;
use crate::lan::{ks_critical_value, third_lemma_check};
use crate::mc::{fmt_real, power_sweep};
use crate::measures::{Measure, Observations, Sample};
use crate::testing::run_test;

/// Default parameter grid for `verify-curve`. Kept below 0.25 so that the
/// difference-quotient error of a linear functional, which changes sign at
/// t = 1/2, stays monotone over the grid.
const VERIFY_GRID: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

#[derive(Debug, Parser)]
#[command(
    name = "functest",
    about = "Score tests for differentiable statistical functionals, with Monte Carlo power checks",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the canonical gradient and its squared norm.
    Gradient(CommonArgs),
    /// Run the score test on a data file (one observation per line).
    Test {
        #[command(flatten)]
        common: CommonArgs,
        /// Observations: atom labels (finite model) or reals (continuous).
        data_file: PathBuf,
    },
    /// Tabulate empirical against theoretical power along the t grid.
    Power(CommonArgs),
    /// LAN diagnostics and the limit law of the statistic under the local
    /// alternative; fails the KS gate with exit code 5.
    LanCheck(CommonArgs),
    /// Check the differentiability rates of the configured curve.
    VerifyCurve(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Experiment configuration (JSON).
    #[arg(short, long)]
    config: PathBuf,
    /// Override the test level from the config.
    #[arg(long)]
    alpha: Option<f64>,
    /// Override the per-replicate sample size.
    #[arg(long)]
    n: Option<usize>,
    /// Override the replicate count.
    #[arg(long)]
    replicates: Option<usize>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the local scale t.
    #[arg(long)]
    t: Option<f64>,
}

#[derive(Debug)]
pub enum CliError {
    Io(String),
    Config(String),
    Degenerate(String),
    Data(String),
    GateFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Degenerate(_) => 3,
            CliError::Data(_) => 4,
            CliError::GateFailed(_) => 5,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Io(m)
            | CliError::Config(m)
            | CliError::Degenerate(m)
            | CliError::Data(m)
            | CliError::GateFailed(m) => m,
        }
    }
}

/// Parses argv, dispatches, and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Gradient(common) => with_experiment(common, cmd_gradient),
        Command::Test { common, data_file } => {
            let data_file = data_file.clone();
            with_experiment(common, move |exp| cmd_test(exp, &data_file))
        }
        Command::Power(common) => with_experiment(common, cmd_power),
        Command::LanCheck(common) => with_experiment(common, cmd_lan_check),
        Command::VerifyCurve(common) => with_experiment(common, cmd_verify_curve),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("functest: {}", err.message());
            err.exit_code()
        }
    }
}

fn with_experiment(
    common: &CommonArgs,
    f: impl FnOnce(Experiment) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let exp = load_experiment(common)?;
    f(exp)
}

fn load_experiment(common: &CommonArgs) -> Result<Experiment, CliError> {
    let text = fs::read_to_string(&common.config)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", common.config.display())))?;
    let mut config = ExperimentConfig::from_json(&text).map_err(|e| {
        CliError::Config(format!(
            "{}: parse error at line {}, column {}: {e}",
            common.config.display(),
            e.line(),
            e.column()
        ))
    })?;
    apply_overrides(&mut config, common);
    config.build().map_err(|e| match e {
        BuildError::Invalid(msg) => CliError::Config(msg),
        BuildError::Degenerate(inner) => CliError::Degenerate(inner.to_string()),
    })
}

fn apply_overrides(config: &mut ExperimentConfig, common: &CommonArgs) {
    if let Some(alpha) = common.alpha {
        config.test.alpha = alpha;
    }
    let needs_sim = common.n.is_some()
        || common.replicates.is_some()
        || common.seed.is_some()
        || common.t.is_some();
    if needs_sim && config.simulation.is_none() {
        config.simulation = Some(SimulationSpec {
            t: None,
            t_grid: None,
            n: 0,
            replicates: 0,
            master_seed: 0,
        });
    }
    if let Some(sim) = config.simulation.as_mut() {
        if let Some(n) = common.n {
            sim.n = n;
        }
        if let Some(replicates) = common.replicates {
            sim.replicates = replicates;
        }
        if let Some(seed) = common.seed {
            sim.master_seed = seed;
        }
        if let Some(t) = common.t {
            sim.t = Some(t);
        }
    }
}

fn simulation(exp: &Experiment) -> Result<&SimulationSpec, CliError> {
    exp.simulation
        .as_ref()
        .ok_or_else(|| CliError::Config("this command needs a simulation block".into()))
}

fn curve(exp: &Experiment) -> Result<&crate::curves::LocalCurve, CliError> {
    exp.curve
        .as_ref()
        .ok_or_else(|| CliError::Config("this command needs a tangent".into()))
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_gradient(exp: Experiment) -> Result<(), CliError> {
    match (&exp.measure, exp.gradient.values()) {
        (Measure::Finite(m), Some(values)) => {
            println!("atom\tgradient");
            for (atom, v) in m.atoms().iter().zip(values) {
                println!("{atom}\t{}", fmt_real(*v));
            }
        }
        _ => {
            // Median model: the gradient is a two-valued sign function.
            let FunctionalSpec::Median { density_at_median } = &exp.functional else {
                return Err(CliError::Config(
                    "continuous gradients are available for the median model only".into(),
                ));
            };
            let half = 1.0 / (2.0 * density_at_median);
            println!("gradient\t(2*f_med)^-1 * sign(F(x) - 1/2)");
            println!("f_med\t{}", fmt_real(*density_at_median));
            println!("value_above_median\t{}", fmt_real(half));
            println!("value_below_median\t{}", fmt_real(-half));
        }
    }
    println!("norm_sq\t{}", fmt_real(exp.gradient.norm_sq()));
    Ok(())
}

fn cmd_test(exp: Experiment, data_file: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(data_file)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", data_file.display())))?;
    let lines: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    if lines.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no observations",
            data_file.display()
        )));
    }
    let obs = match &exp.measure {
        Measure::Finite(m) => {
            let mut indices = Vec::with_capacity(lines.len());
            for label in &lines {
                let idx = m.index_of(label).ok_or_else(|| {
                    CliError::Data(format!("unknown atom label `{label}`"))
                })?;
                indices.push(idx);
            }
            Observations::Atoms(indices)
        }
        Measure::Continuous(_) => {
            let mut values = Vec::with_capacity(lines.len());
            for line in &lines {
                let x: f64 = line.parse().map_err(|_| {
                    CliError::Data(format!("not a real observation: `{line}`"))
                })?;
                values.push(x);
            }
            Observations::Reals(values)
        }
    };
    let sample = Sample { obs, seed: 0 };
    let outcome = run_test(&sample, &exp.gradient, &exp.test)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let json = serde_json::to_string_pretty(&outcome)
        .map_err(|e| CliError::Io(e.to_string()))?;
    println!("{json}");
    Ok(())
}

fn cmd_power(exp: Experiment) -> Result<(), CliError> {
    let sim = simulation(&exp)?;
    let grid: Vec<f64> = match (&sim.t_grid, sim.t) {
        (Some(grid), _) => grid.clone(),
        (None, Some(t)) => vec![t],
        (None, None) => {
            return Err(CliError::Config(
                "power needs simulation.t_grid or simulation.t".into(),
            ))
        }
    };
    let sweep = power_sweep(
        curve(&exp)?,
        &exp.gradient,
        &exp.test,
        &grid,
        sim.n,
        sim.replicates,
        sim.master_seed,
    )
    .map_err(|e| CliError::Config(e.to_string()))?;

    let csv = sweep.to_csv();
    let max_gap = sweep
        .rows
        .iter()
        .map(|r| (r.empirical_rate - r.theoretical_power).abs())
        .fold(0.0_f64, f64::max);
    let summary = format!(
        "power sweep: {} rows, n={}, replicates={}, max |empirical - theoretical| = {:.4}",
        sweep.rows.len(),
        sim.n,
        sim.replicates,
        max_gap
    );
    match &exp.output.csv_path {
        Some(path) => {
            fs::write(path, &csv).map_err(|e| CliError::Io(format!("write {path}: {e}")))?;
            println!("{summary}");
        }
        None => {
            print!("{csv}");
            eprintln!("{summary}");
        }
    }
    if let Some(path) = &exp.output.json_path {
        let json = serde_json::to_string_pretty(&sweep)
            .map_err(|e| CliError::Io(e.to_string()))?;
        fs::write(path, json).map_err(|e| CliError::Io(format!("write {path}: {e}")))?;
    }
    Ok(())
}

fn cmd_lan_check(exp: Experiment) -> Result<(), CliError> {
    let sim = simulation(&exp)?;
    let t = sim.t.unwrap_or(0.0);
    let report = third_lemma_check(
        curve(&exp)?,
        &exp.gradient,
        t,
        sim.n,
        sim.replicates,
        sim.master_seed,
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    let json =
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
    println!("{json}");
    if let Some(path) = &exp.output.json_path {
        fs::write(path, &json).map_err(|e| CliError::Io(format!("write {path}: {e}")))?;
    }
    let critical = ks_critical_value(exp.lan_gate_level, sim.replicates)
        .expect("gate level validated at build time");
    if report.ks_to_limit > critical {
        return Err(CliError::GateFailed(format!(
            "ks_to_limit {:.5} exceeds the {} critical value {:.5}",
            report.ks_to_limit, exp.lan_gate_level, critical
        )));
    }
    Ok(())
}

fn cmd_verify_curve(exp: Experiment) -> Result<(), CliError> {
    let curve = curve(&exp)?;
    let derivative =
        verify_functional_derivative(curve, &exp.functional, &exp.gradient, &VERIFY_GRID)
            .map_err(|e| CliError::Config(e.to_string()))?;
    let l2 = match exp.measure {
        Measure::Finite(_) => Some(
            verify_l2_differentiability(curve, &VERIFY_GRID)
                .map_err(|e| CliError::Config(e.to_string()))?,
        ),
        Measure::Continuous(_) => None,
    };
    let report = serde_json::json!({
        "l2": l2,
        "derivative": derivative,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?
    );
    let l2_ok = l2.as_ref().is_none_or(|r| r.monotone_decreasing);
    if !l2_ok || !derivative.monotone_decreasing {
        return Err(CliError::GateFailed(
            "differentiability residuals are not monotone decreasing".into(),
        ));
    }
    Ok(())
}
