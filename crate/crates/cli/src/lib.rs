//! Command-line front end. `run_cli` is the whole program; the binary only
//! sets up logging and forwards the exit code.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use ctc_core::dsl::{compile, parse_experiment, CompiledExperiment};
use ctc_core::experiments::{run_sweep, ExperimentReport, SweepAxis};
use ctc_core::numerics::{von_neumann_entropy, Seed};
use ctc_core::quantum::{parse_gate, standard_state, ControlArm, DensityMatrix};
use ctc_core::report::{multiplicity_json, outcome_json, report_json, to_pretty_string, write_trace_csv};
use ctc_core::run::{execute, oracle_check, RunOutcome};
use ctc_core::solver::{
    scan_multiplicity_with, solve_fixed_point, ConvergenceTrace, CtcProblem, InitialState, SolverOptions,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ctc", version, about = "Closed-timelike-curve fixed-point simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one CTC problem given on the command line.
    Solve {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Run an experiment file.
    Run {
        #[arg(short = 'f', long = "file")]
        file: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also run the unrolled circuit with this many copies.
        #[arg(long = "oracle-check", value_name = "N")]
        oracle_check: Option<usize>,
    },
    /// Sweep one parameter of a command-line problem.
    Sweep {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, value_parser = parse_axis)]
        axis: SweepAxis,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        grid: Vec<f64>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Count the distinct fixed points of an experiment's CTC map.
    Scan {
        #[arg(short = 'f', long = "file")]
        file: PathBuf,
        #[arg(long, default_value_t = 16)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Print the convergence trace of an experiment file as CSV.
    Trace {
        #[arg(short = 'f', long = "file")]
        file: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write to this path instead of standard output.
        #[arg(short = 'o', long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct ProblemArgs {
    #[arg(long, default_value = "CH")]
    gate: String,
    #[arg(long, default_value = "lower")]
    control: String,
    /// Input ket label for the CTC-bound arm, e.g. `-` or `0`.
    #[arg(long, default_value = "-")]
    input: String,
    #[arg(long, default_value_t = 0.0)]
    p: f64,
    #[arg(long, default_value_t = ctc_core::solver::DEFAULT_DAMPING)]
    damping: f64,
    #[arg(long, default_value_t = ctc_core::solver::DEFAULT_TOL)]
    tol: f64,
    #[arg(long = "max-iter", default_value_t = ctc_core::solver::DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// `in`, `mixed`, or a ket label.
    #[arg(long, default_value = "in")]
    initial: String,
}

#[derive(Debug, Args)]
struct OutputArgs {
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long = "csv-trace")]
    csv_trace: Option<PathBuf>,
}

fn parse_axis(s: &str) -> Result<SweepAxis, String> {
    s.parse().map_err(|e: ctc_core::CtcError| e.to_string())
}

impl ProblemArgs {
    fn build(&self) -> anyhow::Result<(DensityMatrix, ctc_core::UnitaryGate, SolverOptions)> {
        let control: ControlArm = self.control.parse()?;
        let gate = parse_gate(&self.gate, control)?;
        let rho_in = standard_state(&self.input)?;
        let initial = match self.initial.as_str() {
            "in" => InitialState::Input,
            "mixed" => InitialState::MaximallyMixed,
            ket => InitialState::State(standard_state(ket)?),
        };
        let opts = SolverOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            p: self.p,
            damping: self.damping,
            initial,
            keep_iterates: false,
        };
        opts.validate()?;
        Ok((rho_in, gate, opts))
    }
}

/// Failure that maps to an exit code after its message is printed.
struct Failure {
    code: i32,
    message: String,
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure {
            code: EXIT_ERROR,
            message: format!("error: {e:#}"),
        }
    }
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_csv(path: &Path, trace: &ConvergenceTrace) -> anyhow::Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_trace_csv(trace, std::io::BufWriter::new(file))?;
    Ok(())
}

fn load(file: &Path, seed: u64) -> Result<CompiledExperiment, Failure> {
    let source = fs::read_to_string(file)
        .with_context(|| format!("reading {}", file.display()))
        .map_err(Failure::from)?;
    let ast = parse_experiment(&source).map_err(|diags| Failure {
        code: EXIT_ERROR,
        message: diags
            .iter()
            .map(|d| format!("{}:{d}", file.display()))
            .collect::<Vec<_>>()
            .join("\n"),
    })?;
    Ok(compile(&ast, Seed(seed)).map_err(anyhow::Error::from)?)
}

fn not_converged(what: &str) -> Failure {
    Failure {
        code: EXIT_NOT_CONVERGED,
        message: format!("error: {what} did not converge"),
    }
}

fn summary(r: &ExperimentReport) -> String {
    let mut s = format!(
        "{}: converged={} iterations={} residual={:.3e} entropy_bits={:.12}",
        r.name, r.converged, r.iterations, r.residual, r.entropy_bits
    );
    for (k, v) in &r.metrics {
        s.push_str(&format!("\n  {k} = {v}"));
    }
    s
}

fn dispatch(cli: Cli, stdout: &mut dyn Write) -> Result<(), Failure> {
    let mut say = |s: String| {
        let _ = writeln!(stdout, "{s}");
    };
    match cli.command {
        Command::Solve { problem, out } => {
            let (rho_in, gate, opts) = problem.build()?;
            let fp = solve_fixed_point(&CtcProblem::with_options(rho_in, gate, &opts).map_err(anyhow::Error::from)?)
                .map_err(anyhow::Error::from)?;
            let report = ExperimentReport {
                name: "solve".into(),
                output_state: fp.rho_out.clone(),
                ctc_state: Some(fp.rho_star.clone()),
                converged: fp.converged,
                iterations: fp.iterations,
                residual: fp.residual,
                entropy_bits: fp.entropy_bits,
                metrics: Default::default(),
                trace: None,
            };
            say(summary(&report));
            if let Some(path) = &out.json {
                write_file(path, &to_pretty_string(&report_json(&report)))?;
            }
            if let Some(path) = &out.csv_trace {
                write_csv(path, &fp.trace)?;
            }
            if !fp.converged {
                return Err(not_converged("solve"));
            }
        }
        Command::Run {
            file,
            out,
            seed,
            oracle_check: depth,
        } => {
            let exp = load(&file, seed)?;
            log::info!("running {} ({:?})", exp.name, exp.action);
            let outcome = execute(&exp).map_err(anyhow::Error::from)?;
            let oracle = match depth {
                Some(n) => Some(oracle_check(&exp, n).map_err(anyhow::Error::from)?),
                None => None,
            };
            match &outcome {
                RunOutcome::Report(r) => say(summary(r)),
                RunOutcome::Sweep { axis, points } => {
                    for p in points {
                        match &p.outcome {
                            Ok(r) => say(format!("{}={} {}", axis.as_str(), p.value, summary(r))),
                            Err(e) => say(format!("{}={} failed: {e}", axis.as_str(), p.value)),
                        }
                    }
                }
            }
            if let Some(o) = &oracle {
                say(format!(
                    "oracle depth={} distance={:.3e} max_branch_distance={:.3e}",
                    o.depth, o.distance, o.max_branch_distance
                ));
            }
            if let Some(path) = &out.json {
                write_file(path, &to_pretty_string(&outcome_json(&outcome, oracle.as_ref())))?;
            }
            if let Some(path) = &out.csv_trace {
                match &outcome {
                    RunOutcome::Report(ExperimentReport { trace: Some(t), .. }) => write_csv(path, t)?,
                    _ => return Err(anyhow!("this experiment produces no convergence trace").into()),
                }
            }
            if !outcome.converged() {
                return Err(not_converged(&exp.name));
            }
        }
        Command::Sweep {
            problem,
            axis,
            grid,
            json,
        } => {
            let (rho_in, gate, opts) = problem.build()?;
            let points = run_sweep(axis, &grid, &rho_in, &gate, &opts).map_err(anyhow::Error::from)?;
            for p in &points {
                match &p.outcome {
                    Ok(r) => say(format!("{}={} {}", axis.as_str(), p.value, summary(r))),
                    Err(e) => say(format!("{}={} failed: {e}", axis.as_str(), p.value)),
                }
            }
            let outcome = RunOutcome::Sweep { axis, points };
            if let Some(path) = &json {
                write_file(path, &to_pretty_string(&outcome_json(&outcome, None)))?;
            }
            if !outcome.converged() {
                return Err(not_converged("sweep"));
            }
        }
        Command::Scan {
            file,
            samples,
            seed,
            json,
        } => {
            let exp = load(&file, seed)?;
            let rho_in = exp.ctc_input().map_err(anyhow::Error::from)?;
            let report = scan_multiplicity_with(&rho_in, &exp.gate, samples, Seed(seed), &exp.options)
                .map_err(anyhow::Error::from)?;
            let mut v = multiplicity_json(&report);
            let entropies = report
                .representatives
                .iter()
                .map(von_neumann_entropy)
                .collect::<Result<Vec<_>, _>>()
                .map_err(anyhow::Error::from)?;
            v["experiment"] = json!(exp.name);
            v["representative_entropies"] = json!(entropies);
            say(to_pretty_string(&v));
            if let Some(path) = &json {
                write_file(path, &to_pretty_string(&v))?;
            }
            if report.non_converged > 0 {
                return Err(not_converged("scan"));
            }
        }
        Command::Trace { file, seed, out } => {
            let exp = load(&file, seed)?;
            let outcome = execute(&exp).map_err(anyhow::Error::from)?;
            let RunOutcome::Report(ExperimentReport { trace: Some(trace), .. }) = &outcome else {
                return Err(anyhow!("this experiment produces no convergence trace").into());
            };
            match &out {
                Some(path) => write_csv(path, trace)?,
                None => {
                    let mut buf = Vec::new();
                    write_trace_csv(trace, &mut buf).map_err(anyhow::Error::from)?;
                    say(String::from_utf8_lossy(&buf).trim_end().to_string());
                }
            }
            if !outcome.converged() {
                return Err(not_converged(&exp.name));
            }
        }
    }
    Ok(())
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code: 0 on success, 1 on diagnostics or errors, 2 when a
/// solve fails to converge. Results go to `stdout`, diagnostics to `stderr`.
pub fn run_cli<I, S>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(stdout, "{text}");
            } else {
                let _ = write!(stderr, "{text}");
            }
            return code;
        }
    };
    match dispatch(cli, stdout) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(stderr, "{}", f.message);
            f.code
        }
    }
}
