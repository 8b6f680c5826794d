//! Command-line front end: `modes | kernel | verify | simulate | report`.
//!
//! Settings come from an optional TOML file, then command-line flags (flags
//! win). Every subcommand writes its files into the output directory, prints
//! the path of its JSON summary on stdout, and sends diagnostics to stderr.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid configuration,
//! 3 numerical failure, 4 resonant `λ`, 5 failed verification gates.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_loop_sim::{harmonic_initial, run_experiment, RunSummary, SimConfig, SimError};
use crate::export::write_json;
use crate::fredholm_transform::{assemble, TransformSummary, TransformSystem};
use crate::kernel_builder::{
    build_kernel, check_nonresonance, nonresonance_check_range, DecayConfig, KernelData,
    KernelError, NonresonanceReport, TailClosure,
};
use crate::spectral_basis::{build_modes, write_mode_table, DegenerateParams, EigenMode};
use crate::verify::{run_battery, VerifyOptions, VerifyReport};

/// Largest accepted truncation.
pub const MAX_MODES: usize = 512;
/// Points per axis of the exported kernel grid.
pub const KERNEL_GRID_POINTS: usize = 41;
/// `(α, λ)` pairs of the default experiment grid.
pub const DEFAULT_GRID: [(f64, f64); 8] = [
    (0.0, 5.0),
    (0.0, 20.0),
    (0.25, 5.0),
    (0.25, 20.0),
    (0.5, 5.0),
    (0.5, 20.0),
    (0.75, 5.0),
    (0.75, 20.0),
];

#[derive(Parser, Debug)]
#[command(
    name = "fredholm",
    version,
    about = "Fredholm backstepping for the weakly degenerate heat equation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Eigenvalue and eigenfunction table
    Modes(CommonArgs),
    /// Kernel coefficients, transformation matrix and identity residuals
    Kernel(CommonArgs),
    /// Full property battery; exits with 5 if any gate fails
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Corrupt the closed-form Gram matrix (negative control for the oracle gate)
        #[arg(long, hide = true)]
        sabotage_gram: bool,
    },
    /// Closed-loop and target simulations with decay fits
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Run the default (alpha, lambda) grid instead of a single configuration
        #[arg(long)]
        grid: bool,
    },
    /// Kernel, simulation and verification in one run, summarised as Markdown
    Report(CommonArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// Degeneracy exponent, 0 <= alpha < 1
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Target decay rate, lambda >= 0
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Truncation N
    #[arg(long = "n-modes")]
    pub n_modes: Option<usize>,
    /// Simulation horizon
    #[arg(long = "t-final")]
    pub t_final: Option<f64>,
    /// Output directory
    #[arg(long = "out-dir")]
    pub out_dir: Option<PathBuf>,
    /// TOML configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for randomized checks
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Simulation block of the configuration file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub t_final: f64,
    pub dt: f64,
    pub integrator_tol: f64,
    pub fit_window: [f64; 2],
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            t_final: d.t_final,
            dt: d.dt,
            integrator_tol: d.integrator_tol,
            fit_window: [d.fit_window.0, d.fit_window.1],
        }
    }
}

/// Complete run configuration.
///
/// ```toml
/// alpha = 0.5
/// lambda = 5.0
/// n_modes = 64
/// resonance_margin = 5e-6   # optional, defaults to 1e-6 * lambda
/// seed = 1
/// out_dir = "out"
///
/// [sim]
/// t_final = 2.0
/// dt = 0.01
/// integrator_tol = 1e-8
/// fit_window = [0.5, 2.0]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub n_modes: usize,
    pub resonance_margin: Option<f64>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub sim: SimSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            lambda: 5.0,
            n_modes: 64,
            resonance_margin: None,
            seed: 1,
            out_dir: PathBuf::from("out"),
            sim: SimSection::default(),
        }
    }
}

impl RunConfig {
    /// File settings (if any) overridden by flags, then validated.
    pub fn resolve(args: &CommonArgs) -> Result<Self, CliError> {
        let mut cfg = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    CliError::Config(format!("cannot read {}: {e}", path.display()))
                })?;
                toml::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = args.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = args.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = args.n_modes {
            cfg.n_modes = v;
        }
        if let Some(v) = args.t_final {
            cfg.sim.t_final = v;
            // keep the default window inside a shorter horizon
            if cfg.sim.fit_window[1] > v {
                cfg.sim.fit_window = [0.25 * v, v];
            }
        }
        if let Some(v) = &args.out_dir {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = args.seed {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let field = |name: &str, msg: String| Err(CliError::Config(format!("{name}: {msg}")));
        if let Err(e) = DegenerateParams::new(self.alpha) {
            return field("alpha", e.to_string());
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return field(
                "lambda",
                format!("must be finite and >= 0, got {}", self.lambda),
            );
        }
        if !(2..=MAX_MODES).contains(&self.n_modes) {
            return field(
                "n_modes",
                format!("must lie in [2, {MAX_MODES}], got {}", self.n_modes),
            );
        }
        if let Err(e) = DecayConfig::new(self.lambda, self.margin()) {
            return field("resonance_margin", e.to_string());
        }
        if let Err(SimError::InvalidConfig { field: f, reason }) = self.sim_config().validate() {
            return field(&format!("sim.{f}"), reason);
        }
        Ok(())
    }

    pub fn margin(&self) -> f64 {
        self.resonance_margin.unwrap_or(1e-6 * self.lambda)
    }

    pub fn params(&self) -> DegenerateParams {
        DegenerateParams::new(self.alpha).expect("validated")
    }

    pub fn decay(&self) -> DecayConfig {
        DecayConfig::new(self.lambda, self.margin()).expect("validated")
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            t_final: self.sim.t_final,
            dt: self.sim.dt,
            integrator_tol: self.sim.integrator_tol,
            fit_window: (self.sim.fit_window[0], self.sim.fit_window[1]),
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Resonance(String),
    Verification(String),
    Io(std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Io(_) => 1,
            Self::Config(_) => 2,
            Self::Numerical(_) => 3,
            Self::Resonance(_) => 4,
            Self::Verification(_) => 5,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(m) => write!(f, "invalid configuration: {m}"),
            Self::Numerical(m) => write!(f, "numerical failure: {m}"),
            Self::Resonance(m) => write!(f, "resonance: {m}"),
            Self::Verification(m) => write!(f, "verification failed: {m}"),
            Self::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

impl From<KernelError> for CliError {
    fn from(e: KernelError) -> Self {
        match e {
            KernelError::Resonance(r) => Self::Resonance(r.to_string()),
            other => Self::Numerical(other.to_string()),
        }
    }
}

fn numerical<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Numerical(e.to_string())
}

fn prepare_dir(cfg: &RunConfig) -> Result<&Path, CliError> {
    fs::create_dir_all(&cfg.out_dir)?;
    Ok(&cfg.out_dir)
}

// ---------------------------------------------------------------------------
// modes
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct ModesSummary {
    alpha: f64,
    nu: f64,
    kappa: f64,
    n_modes: usize,
    lambda_1: f64,
    lambda_n: f64,
    table: String,
}

pub fn cmd_modes(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = prepare_dir(cfg)?;
    let params = cfg.params();
    let modes = build_modes(&params, cfg.n_modes).map_err(numerical)?;
    write_mode_table(&dir.join("modes.csv"), &modes)?;
    let summary = ModesSummary {
        alpha: params.alpha,
        nu: params.nu,
        kappa: params.kappa,
        n_modes: modes.len(),
        lambda_1: modes[0].lambda,
        lambda_n: modes[modes.len() - 1].lambda,
        table: "modes.csv".into(),
    };
    let path = dir.join("modes_summary.json");
    write_json(&path, &summary)?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// kernel
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct KernelSummary {
    alpha: f64,
    lambda: f64,
    n_modes: usize,
    resonance_margin: f64,
    nonresonance: Option<NonresonanceReport>,
    closure: TailClosure,
    solve_condition: f64,
    tail_norm: f64,
    truncation_indicator: f64,
    kernel_l2_norm: f64,
    transform: TransformSummary,
    files: Vec<&'static str>,
}

struct Pipeline {
    modes: Vec<EigenMode>,
    kernel: KernelData,
    sys: TransformSystem,
    nonresonance: Option<NonresonanceReport>,
}

fn pipeline(cfg: &RunConfig) -> Result<Pipeline, CliError> {
    let params = cfg.params();
    let config = cfg.decay();
    let nonresonance = if config.lambda > 0.0 {
        let range = nonresonance_check_range(&params, config.lambda, cfg.n_modes);
        let modes = build_modes(&params, range).map_err(numerical)?;
        Some(check_nonresonance(&modes, &config).map_err(KernelError::from)?)
    } else {
        eprintln!("warning: lambda = 0 gives the zero kernel and T = I");
        None
    };
    let (modes, kernel) = build_kernel(&params, &config, cfg.n_modes, TailClosure::Truncated)?;
    let sys = assemble(&kernel).map_err(numerical)?;
    Ok(Pipeline {
        modes,
        kernel,
        sys,
        nonresonance,
    })
}

pub fn cmd_kernel(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = prepare_dir(cfg)?;
    let Pipeline {
        kernel,
        sys,
        nonresonance,
        ..
    } = pipeline(cfg)?;
    kernel.write_mode_table(&dir.join("kernel_modes.csv"))?;
    kernel.write_kernel_grid(&dir.join("kernel_grid.csv"), KERNEL_GRID_POINTS)?;
    sys.write_t_matrix(&dir.join("t_matrix.csv"))?;
    sys.write_spectrum(&dir.join("spectrum.csv"))?;
    sys.write_residuals(&dir.join("residuals.csv"))?;
    let summary = KernelSummary {
        alpha: cfg.alpha,
        lambda: cfg.lambda,
        n_modes: cfg.n_modes,
        resonance_margin: cfg.margin(),
        nonresonance,
        closure: kernel.closure,
        solve_condition: kernel.condition,
        tail_norm: kernel.tail_norm(),
        truncation_indicator: kernel.truncation_indicator(),
        kernel_l2_norm: kernel
            .kernel_norm_partial_sums()
            .last()
            .copied()
            .unwrap_or(0.0)
            .max(0.0)
            .sqrt(),
        transform: sys.summary(),
        files: vec![
            "kernel_modes.csv",
            "kernel_grid.csv",
            "t_matrix.csv",
            "spectrum.csv",
            "residuals.csv",
        ],
    };
    let path = dir.join("kernel_summary.json");
    write_json(&path, &summary)?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

fn verify_options(cfg: &RunConfig, sabotage_gram: bool) -> VerifyOptions {
    VerifyOptions {
        alpha: cfg.alpha,
        lambda: cfg.lambda,
        n_modes: cfg.n_modes,
        resonance_margin: cfg.margin(),
        sim: cfg.sim_config(),
        seed: cfg.seed,
        sabotage_gram,
    }
}

fn write_verify(dir: &Path, report: &VerifyReport) -> Result<PathBuf, CliError> {
    fs::write(dir.join("verify_report.txt"), report.text())?;
    let path = dir.join("verify_report.json");
    write_json(&path, report)?;
    Ok(path)
}

pub fn cmd_verify(cfg: &RunConfig, sabotage_gram: bool) -> Result<PathBuf, CliError> {
    let dir = prepare_dir(cfg)?;
    let report = run_battery(&verify_options(cfg, sabotage_gram));
    eprint!("{}", report.text());
    let path = write_verify(dir, &report)?;
    if report.passed {
        Ok(path)
    } else {
        let names: Vec<&str> = report.failed().iter().map(|g| g.name.as_str()).collect();
        Err(CliError::Verification(format!(
            "{} (report at {})",
            names.join(", "),
            path.display()
        )))
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn simulate_one(cfg: &RunConfig, dir: &Path, suffix: &str) -> Result<RunSummary, CliError> {
    let Pipeline { modes, sys, .. } = pipeline(cfg)?;
    let u0 = harmonic_initial(cfg.n_modes);
    let (summary, closed, target) = run_experiment(
        &cfg.params(),
        &sys,
        &modes,
        &cfg.decay(),
        &u0,
        &cfg.sim_config(),
    )
    .map_err(numerical)?;
    closed.write_csv(&dir.join(format!("closed_loop{suffix}.csv")))?;
    target.write_csv(&dir.join(format!("target{suffix}.csv")))?;
    Ok(summary)
}

pub fn cmd_simulate(cfg: &RunConfig, grid: bool) -> Result<PathBuf, CliError> {
    let dir = prepare_dir(cfg)?;
    let path = dir.join("simulate_summary.json");
    if grid {
        let runs: Result<Vec<RunSummary>, CliError> = DEFAULT_GRID
            .par_iter()
            .map(|&(alpha, lambda)| {
                let run = RunConfig {
                    alpha,
                    lambda,
                    resonance_margin: None,
                    ..cfg.clone()
                };
                run.validate()?;
                simulate_one(&run, dir, &format!("_a{alpha}_l{lambda}"))
            })
            .collect();
        write_json(&path, &runs?)?;
    } else {
        write_json(&path, &simulate_one(cfg, dir, "")?)?;
    }
    Ok(path)
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct ReportSummary {
    config: RunConfig,
    transform: TransformSummary,
    run: RunSummary,
    verification_passed: bool,
    failed_gates: Vec<String>,
}

pub fn cmd_report(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = prepare_dir(cfg)?;
    cmd_modes(cfg)?;
    cmd_kernel(cfg)?;
    let run = simulate_one(cfg, dir, "")?;
    write_json(dir.join("simulate_summary.json"), &run)?;
    let transform = pipeline(cfg)?.sys.summary();
    let report = run_battery(&verify_options(cfg, false));
    write_verify(dir, &report)?;

    let mut md = String::new();
    let _ = writeln!(md, "# Fredholm backstepping run\n");
    let _ = writeln!(
        md,
        "alpha = {}, lambda = {}, N = {}, seed = {}\n",
        cfg.alpha, cfg.lambda, cfg.n_modes, cfg.seed
    );
    let _ = writeln!(md, "## Transformation\n");
    let _ = writeln!(md, "| quantity | value |\n|---|---|");
    for (k, v) in [
        ("sigma_min(T)", transform.sigma_min),
        ("cond(T)", transform.condition),
        ("max TB=B residual", transform.tb_residual_max),
        (
            "operator identity residual",
            transform.operator_identity_residual,
        ),
        ("spectrum match error", transform.spectrum_match_error),
    ] {
        let _ = writeln!(md, "| {k} | {v:.6e} |");
    }
    let _ = writeln!(md, "\n## Decay\n");
    let _ = writeln!(md, "| quantity | value |\n|---|---|");
    for (k, v) in [
        ("fitted closed-loop rate", run.fitted_rate),
        ("lambda_1 + lambda", run.truncated_rate),
        ("guaranteed rate lambda", run.guaranteed_rate),
        ("C estimate", run.c_estimate),
        ("conjugacy deviation", run.conjugacy_deviation),
    ] {
        let _ = writeln!(md, "| {k} | {v:.6e} |");
    }
    let _ = writeln!(md, "\n## Verification\n\n```\n{}```", report.text());
    fs::write(dir.join("report.md"), md)?;

    let summary = ReportSummary {
        config: cfg.clone(),
        transform,
        run,
        verification_passed: report.passed,
        failed_gates: report.failed().iter().map(|g| g.name.clone()).collect(),
    };
    let path = dir.join("report.json");
    write_json(&path, &summary)?;
    Ok(path)
}

/// Parses arguments, runs the subcommand and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Modes(a) => RunConfig::resolve(a).and_then(|c| cmd_modes(&c)),
        Command::Kernel(a) => RunConfig::resolve(a).and_then(|c| cmd_kernel(&c)),
        Command::Verify {
            common,
            sabotage_gram,
        } => RunConfig::resolve(common).and_then(|c| cmd_verify(&c, *sabotage_gram)),
        Command::Simulate { common, grid } => {
            RunConfig::resolve(common).and_then(|c| cmd_simulate(&c, *grid))
        }
        Command::Report(a) => RunConfig::resolve(a).and_then(|c| cmd_report(&c)),
    };
    match result {
        Ok(path) => {
            println!("{}", path.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(extra: &[&str]) -> CommonArgs {
        let mut v = vec!["fredholm", "modes"];
        v.extend_from_slice(extra);
        match Cli::try_parse_from(v).unwrap().command {
            Command::Modes(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.toml");
        fs::write(&file, "alpha = 0.25\nlambda = 20.0\n[sim]\ndt = 0.005\n").unwrap();
        let path = file.to_str().unwrap();
        let cfg = RunConfig::resolve(&args(&["--config", path, "--lambda", "7"])).unwrap();
        assert_eq!(cfg.alpha, 0.25);
        assert_eq!(cfg.lambda, 7.0);
        assert_eq!(cfg.sim.dt, 0.005);
        assert_eq!(cfg.margin(), 7e-6);
    }

    #[test]
    fn invalid_fields_are_named() {
        let err = RunConfig::resolve(&args(&["--alpha", "1.5"])).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("alpha"));
        let err = RunConfig::resolve(&args(&["--n-modes", "1"])).unwrap_err();
        assert!(err.to_string().contains("n_modes"));
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("bad.toml");
        fs::write(&file, "alpha = 0.5\nbogus = 1\n").unwrap();
        let err = RunConfig::resolve(&args(&["--config", file.to_str().unwrap()])).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn short_horizon_moves_fit_window() {
        let cfg = RunConfig::resolve(&args(&["--t-final", "1"])).unwrap();
        assert_eq!(cfg.sim.fit_window, [0.25, 1.0]);
    }
}
