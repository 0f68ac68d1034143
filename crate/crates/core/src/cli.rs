//! Command-line front end.
//!
//! Exit codes: 0 success, 1 mathematical failure (infeasible, uncertified,
//! failed stage), 2 input error (unreadable or malformed files, bad signal).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::fixture::{self, load_reference};
use crate::geometry::DEFAULT_RESIDUAL_TOL;
use crate::linalg::{from_rows, Matrix};
use crate::lmi::{
    find_common_lyapunov, verify_common_lyapunov, LyapunovCertificate, SolverOptions,
    DEFAULT_EPSILON,
};
use crate::model::{load_problem, SwitchingSignal};
use crate::regulator::{certify, load_regulator, regulator_to_json, synthesize, SynthesisOptions};
use crate::report::{Check, RunReport};
use crate::reproduce::{ExampleCase, Reproduction};
use crate::simulation::{error_metrics, simulate, SimulationConfig, DEFAULT_HORIZON};
use crate::svg::{line_chart, Series};

/// Environment variable overriding the default residual tolerance.
pub const TOL_ENV: &str = "SWITCHREG_TOL";

#[derive(Debug, Parser)]
#[command(
    name = "switchreg",
    version,
    about = "Output regulators with quadratic stability for switching systems"
)]
pub struct Cli {
    /// Print the report as JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Certify quadratic stability of the plant modes, with a given or
    /// computed common Lyapunov matrix.
    CheckStability(CheckStabilityArgs),
    /// Synthesize and certify a regulator, writing it to a file.
    Synthesize(SynthesizeArgs),
    /// Simulate the closed loop and write CSV/SVG artifacts.
    Simulate(SimulateArgs),
    /// Run every acceptance check on the worked example.
    ReproducePaper(ReproduceArgs),
}

#[derive(Debug, Args)]
pub struct CheckStabilityArgs {
    pub problem: PathBuf,
    /// JSON file with a `Q` matrix (or a bare matrix) to verify.
    #[arg(long)]
    pub q: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    pub problem: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Strict-feasibility margin of the LMIs.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Synthesize the plant state feedback even if the plant is already
    /// quadratically stable.
    #[arg(long)]
    pub force_feedback_synthesis: bool,
    /// Residual tolerance for the Francis and friend equations.
    #[arg(long, env = TOL_ENV, default_value_t = DEFAULT_RESIDUAL_TOL)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub problem: PathBuf,
    pub regulator: PathBuf,
    /// Switching signal, e.g. `1:0-29,2:30-69,1:70-99`; defaults to mode 1
    /// throughout.
    #[arg(long)]
    pub signal: Option<String>,
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    pub horizon: usize,
    /// Seed for the exosystem initial state.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    /// Problem file replacing the bundled worked example.
    #[arg(long)]
    pub problem: Option<PathBuf>,
    /// Reference objects replacing the bundled reference values.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

/// Result of one command: what to print and the exit code.
#[derive(Debug)]
pub struct Outcome {
    pub report: Option<RunReport>,
    pub error: Option<String>,
    pub code: i32,
}

impl Outcome {
    fn from_report(report: RunReport) -> Self {
        let code = if report.passed() { 0 } else { 1 };
        Self {
            report: Some(report),
            error: None,
            code,
        }
    }

    fn from_error(title: &str, err: Error) -> Self {
        match err {
            Error::Stage { stage, reason } => {
                let mut report = RunReport::new(title);
                report.check(Check::new(stage.name(), false, reason.clone()));
                Self {
                    report: Some(report),
                    error: Some(format!("stage {stage} failed: {reason}")),
                    code: 1,
                }
            }
            other => Self {
                report: None,
                code: other.exit_code(),
                error: Some(other.to_string()),
            },
        }
    }
}

pub fn run(cli: &Cli) -> Outcome {
    let (title, result) = match &cli.command {
        Command::CheckStability(a) => ("stability check", check_stability(a)),
        Command::Synthesize(a) => ("regulator synthesis", synthesize_cmd(a)),
        Command::Simulate(a) => ("closed-loop simulation", simulate_cmd(a)),
        Command::ReproducePaper(a) => ("worked example reproduction", reproduce_cmd(a)),
    };
    match result {
        Ok(report) => Outcome::from_report(report),
        Err(e) => Outcome::from_error(title, e),
    }
}

/// Reads a Lyapunov matrix from `{"Q": [[...]]}` or a bare row array.
pub fn load_q(path: &Path) -> Result<Matrix> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    let rows = value.get("Q").cloned().unwrap_or(value);
    let rows: Vec<Vec<f64>> =
        serde_json::from_value(rows).map_err(|e| Error::Parse(format!("Q matrix: {e}")))?;
    from_rows(&rows)
}

fn certificate_check(name: &str, cert: &LyapunovCertificate) -> Check {
    Check::new(name, cert.margins.strictly_satisfied(), "")
        .with("lambda_min", cert.margins.positivity)
        .with("lambda_max decrease", cert.margins.decrease.clone())
}

fn check_stability(args: &CheckStabilityArgs) -> Result<RunReport> {
    let (plant, _) = load_problem(&args.problem)?;
    let modes = plant.state_matrices();
    let mut report = RunReport::new("stability check");
    report.value("modes", plant.n_modes());
    report.value("state dimension", plant.state_dim());
    match &args.q {
        Some(path) => {
            let q = load_q(path)?;
            if q.shape() != (plant.state_dim(), plant.state_dim()) {
                return Err(Error::mismatch(
                    "Q",
                    format!("{0}×{0}", plant.state_dim()),
                    format!("{}×{}", q.nrows(), q.ncols()),
                ));
            }
            report.value("source", "given Q");
            match verify_common_lyapunov(&q, &modes) {
                Ok(cert) => {
                    report.check(certificate_check("common Lyapunov", &cert));
                }
                Err(Error::Rejected(reason)) => {
                    report.check(Check::new("common Lyapunov", false, reason));
                }
                Err(e) => return Err(e),
            }
        }
        None => {
            report.value("source", "analysis LMI");
            report.value("epsilon", args.epsilon);
            match find_common_lyapunov(&modes, args.epsilon, &SolverOptions::default()) {
                Ok(cert) => {
                    report.check(certificate_check("common Lyapunov", &cert));
                }
                Err(e) if !e.is_input_error() => {
                    report.check(Check::new("common Lyapunov", false, e.to_string()));
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(report)
}

fn synthesize_cmd(args: &SynthesizeArgs) -> Result<RunReport> {
    let (plant, exo) = load_problem(&args.problem)?;
    let positive = |v: f64| v.is_finite() && v > 0.0;
    if !positive(args.epsilon) || !positive(args.tol) {
        return Err(Error::InvalidInput(
            "epsilon and tol must be positive".into(),
        ));
    }
    let options = SynthesisOptions {
        epsilon: args.epsilon,
        residual_tol: args.tol,
        force_feedback_synthesis: args.force_feedback_synthesis,
        ..SynthesisOptions::default()
    };
    let reg = synthesize(&plant, &exo, &options)?;
    let cert = certify(&reg, args.tol)?;

    let mut report = RunReport::new("regulator synthesis");
    if let Some(d) = &reg.diagnostics {
        report.value("dim V*_R", d.vstar.dim());
        report.value("condition (i)", d.condition_i);
        report.value("Francis residual", d.francis.max_residual());
        report.value("plant feedback synthesized", d.feedback_synthesized);
    }
    report.value("dim V", reg.v.dim());
    report.value("regulator state dimension", reg.state_dim());
    report.value("regulator input dimension", reg.input_dim());
    report.value("regulator output dimension", reg.output_dim());
    report.check(
        Check::new(
            "(a) friendship",
            cert.friendship.iter().all(|&r| r <= args.tol),
            "",
        )
        .with("residuals", cert.friendship.clone()),
    );
    report.check(
        Check::new(
            "(b) Ce annihilates V",
            cert.annihilation <= crate::regulator::ANNIHILATION_TOL,
            "",
        )
        .with("max |Ce V|", cert.annihilation),
    );
    report.check(
        Check::new(
            "(c) innovation dynamics",
            cert.innovation.strictly_satisfied(),
            "",
        )
        .with("lambda_min(P)", cert.innovation.positivity)
        .with("lambda_max decrease", cert.innovation.decrease.clone()),
    );
    report.check(
        Check::new("(d) plant loop", cert.plant_loop.strictly_satisfied(), "")
            .with("lambda_min(Q)", cert.plant_loop.positivity)
            .with("lambda_max decrease", cert.plant_loop.decrease.clone()),
    );
    report.check(
        Check::new(
            "reassembly",
            cert.failures
                .iter()
                .all(|f| !f.starts_with("regulator matrices")),
            "",
        )
        .with("max residual", cert.reassembly),
    );

    if report.passed() {
        std::fs::write(&args.output, regulator_to_json(&reg)).map_err(|source| Error::Io {
            path: args.output.display().to_string(),
            source,
        })?;
        report.value("written", args.output.display().to_string());
    }
    Ok(report)
}

fn simulate_cmd(args: &SimulateArgs) -> Result<RunReport> {
    let (plant, exo) = load_problem(&args.problem)?;
    let reg = load_regulator(&args.regulator, &plant, &exo)?;
    if args.horizon == 0 {
        return Err(Error::InvalidInput("horizon must be at least 1".into()));
    }
    let signal = match &args.signal {
        Some(text) => SwitchingSignal::parse(text)?,
        None => SwitchingSignal::constant(0, args.horizon)?,
    };
    let cfg = SimulationConfig::seeded(&plant, &exo, signal, args.horizon, args.seed);
    let trace = simulate(&plant, &exo, &reg, &cfg)?;
    let metrics = error_metrics(&trace);

    if let Some(path) = &args.csv {
        trace.write_csv(path)?;
    }
    if let Some(path) = &args.svg {
        let times: Vec<f64> = trace
            .records
            .iter()
            .map(|r| r.t as f64 * trace.sampling_time)
            .collect();
        let series: Vec<Vec<f64>> = (0..trace.output_count())
            .map(|j| trace.error_series(j))
            .collect();
        let panels: Vec<Series<'_>> = series
            .iter()
            .enumerate()
            .map(|(j, values)| Series {
                label: format!("e{}", j + 1),
                values,
            })
            .collect();
        let svg = line_chart("regulation error", &times, &panels);
        std::fs::write(path, svg).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
    }

    let mut report = RunReport::new("closed-loop simulation");
    let cert = certify(&reg, DEFAULT_RESIDUAL_TOL)?;
    report.check(Check::new(
        "regulator certificate",
        cert.passed(),
        cert.failures.join("; "),
    ));
    report.value("signal", trace.signal.to_string());
    report.value("horizon", trace.len());
    report.value("seed", args.seed as usize);
    report.value("tail starts at step", metrics.tail_start);
    for (j, o) in metrics.outputs.iter().enumerate() {
        let e = format!("e{}", j + 1);
        report.value(format!("{e} peak"), o.peak);
        report.value(format!("{e} tail max"), o.tail_max);
        match o.settle_step {
            Some(step) => report.value(format!("{e} last step above 1% of peak"), step),
            None => report.value(format!("{e} last step above 1% of peak"), "none"),
        };
    }
    for s in &metrics.switches {
        report.value(
            format!("transient after switch at step {}", s.step),
            s.magnitude.clone(),
        );
    }
    Ok(report)
}

fn reproduce_cmd(args: &ReproduceArgs) -> Result<RunReport> {
    let mut case = ExampleCase::bundled();
    if let Some(path) = &args.problem {
        let (plant, exo) = load_problem(path)?;
        case.plant = plant;
        case.exo = exo;
        case.signal = fixture::example_signal();
    }
    if let Some(path) = &args.reference {
        case.reference = load_reference(path)?;
    }
    Ok(Reproduction::new(case, SynthesisOptions::default()).run_all())
}

/// Parses arguments, runs, prints, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = run(&cli);
    if let Some(report) = &outcome.report {
        if cli.json {
            println!("{}", report.render_json());
        } else {
            print!("{}", report.render_text());
        }
    }
    if let Some(err) = &outcome.error {
        eprintln!("error: {err}");
    } else if outcome.code != 0 {
        if let Some(report) = &outcome.report {
            eprintln!("failed checks: {}", report.failing().join(", "));
        }
    }
    outcome.code
}
