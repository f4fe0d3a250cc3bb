//! Command-line front end behind the `ccmpc` binary.
//!
//! Exit codes: 0 when the solve is optimal, 2 when the problem is
//! infeasible, 1 on any error (including usage errors and iteration limits).

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::benchmark::{self, Scenario};
use crate::chance::{beta_curves, write_beta_csv};
use crate::cost::{expected_cost, lqg_riccati_stages, state_feedback_policy};
use crate::linalg::to_rows;
use crate::mc::{estimate_violation, simulate_runs, ViolationEstimate};
use crate::problem::{self, Method, PolicyFile, ProblemSpec, Synthesis};
use crate::solver::{SolveReport, SolveStatus, SolverOptions};
use crate::specfun::Probability;

pub const EXIT_OPTIMAL: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ccmpc", version, about = "Chance-constrained disturbance-feedback policy synthesis")]
pub struct Cli {
    /// Worker threads for Monte Carlo runs (CCMPC_THREADS caps it further).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a problem file and write the policy.
    Synthesize(SynthesizeArgs),
    /// Simulate a policy in closed loop and count constraint violations.
    Simulate(SimulateArgs),
    /// Tabulate the tightening factors of both box-constraint methods.
    BetaCurves(BetaCurvesArgs),
    /// Unconstrained finite-horizon LQG gains and exact expected cost.
    Lqg(LqgArgs),
    /// Built-in spring-mass scenarios.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[arg(long)]
    pub problem: PathBuf,
    /// Policy JSON output.
    #[arg(long)]
    pub out: PathBuf,
    /// Relaxation applied to every constraint instead of the file's.
    #[arg(long)]
    pub method: Option<Method>,
    /// Solver options JSON; replaces the problem's `solver` block.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Full report JSON output.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub problem: PathBuf,
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub runs: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Directory for `trajectories.csv`.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Violation summary JSON output (also printed).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BetaCurvesArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub m: usize,
    /// Comma-separated constraint counts per stage and coordinate.
    #[arg(long, value_delimiter = ',', required = true)]
    pub rbar: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    pub nmax: usize,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LqgArgs {
    #[arg(long)]
    pub problem: PathBuf,
    /// JSON output; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub scenario: Scenario,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1000)]
    pub runs: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Displacement bound of the box scenarios.
    #[arg(long, default_value_t = benchmark::DISPLACEMENT_BOUND)]
    pub bound: f64,
    /// Feasibility verdicts over a grid of α instead of one run.
    #[arg(long)]
    pub sweep: bool,
    /// Grid for `--sweep`; 0.01, 0.02, …, 0.20 when absent.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Vec<f64>,
    /// Append the unconstrained LQG policy as a baseline row.
    #[arg(long)]
    pub lqg: bool,
    /// Summary table CSV; standard output when absent.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Directory for the problem, policy and trajectory files.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code. Messages go to `out` and `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OPTIMAL };
        }
    };
    match execute(&cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_ERROR
        }
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<i32> {
    let pool = match cli.threads {
        Some(0) => bail!("--threads must be positive"),
        Some(k) => Some(rayon::ThreadPoolBuilder::new().num_threads(k).build()?),
        None => None,
    };
    // Output buffers are not `Send`, so the pool only wraps the work and
    // the text is written afterwards.
    let mut text = Vec::new();
    let mut warn = Vec::new();
    let code = match &pool {
        Some(p) => p.install(|| dispatch(&cli.command, &mut text, &mut warn)),
        None => dispatch(&cli.command, &mut text, &mut warn),
    };
    out.write_all(&text)?;
    err.write_all(&warn)?;
    code
}

fn dispatch(cmd: &Command, out: &mut Vec<u8>, err: &mut Vec<u8>) -> anyhow::Result<i32> {
    match cmd {
        Command::Synthesize(a) => cmd_synthesize(a, out, err),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::BetaCurves(a) => cmd_beta_curves(a, out),
        Command::Lqg(a) => cmd_lqg(a, out, err),
        Command::Benchmark(a) => cmd_benchmark(a, out, err),
    }
}

/// Report written by `synthesize`.
#[derive(Debug, Serialize)]
pub struct SynthesisReport {
    pub methods: Vec<String>,
    /// Tightening factor per constraint, when the method has one.
    pub betas: Vec<Option<f64>>,
    /// LMI multipliers at the solution.
    pub lambdas: Vec<f64>,
    pub solve: SolveReport,
}

fn load_spec(path: &Path) -> anyhow::Result<ProblemSpec> {
    ProblemSpec::from_file(path).with_context(|| format!("reading problem {}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn status_code(status: SolveStatus) -> i32 {
    match status {
        SolveStatus::Optimal => EXIT_OPTIMAL,
        SolveStatus::Infeasible => EXIT_INFEASIBLE,
        SolveStatus::MaxIter => EXIT_ERROR,
    }
}

fn cmd_synthesize(a: &SynthesizeArgs, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<i32> {
    let mut spec = load_spec(&a.problem)?;
    if let Some(m) = a.method {
        spec = spec.with_method(m)?;
    }
    if let Some(c) = &a.config {
        spec.solver = load_options(c)?;
    }
    let problem = spec.build()?;
    let Synthesis { policy, report, lambdas } = problem::synthesize(&problem)?;
    let summary = SynthesisReport {
        methods: problem.constraints.iter().map(|c| c.relaxation.method().to_string()).collect(),
        betas: problem.betas()?,
        lambdas,
        solve: report,
    };
    if let Some(path) = &a.report {
        write_file(path, serde_json::to_string_pretty(&summary)?.as_bytes())?;
    }
    let r = &summary.solve;
    match &policy {
        Some(p) => {
            write_file(&a.out, policy_json(p)?.as_bytes())?;
            writeln!(
                out,
                "status optimal\nobjective {}\nkkt_residual {}\nmax_violation {}",
                r.objective_value, r.kkt_residual, r.max_violation
            )?;
        }
        None => {
            writeln!(out, "status {}\nphase1_slack {}", r.status, r.phase1_slack)?;
            if r.status == SolveStatus::MaxIter {
                writeln!(err, "error: iteration limit reached before the barrier path converged")?;
            }
        }
    }
    Ok(status_code(r.status))
}

fn policy_json(p: &crate::policy::PolicyParams) -> anyhow::Result<String> {
    Ok(PolicyFile::from_policy(p).to_json())
}

pub fn load_options(path: &Path) -> anyhow::Result<SolverOptions> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).with_context(|| format!("parsing solver options {}", path.display()))
}

#[derive(Debug, Serialize)]
pub struct ConstraintViolation {
    pub name: String,
    pub alpha: Option<f64>,
    pub estimate: ViolationEstimate,
}

/// Summary printed by `simulate`.
#[derive(Debug, Serialize)]
pub struct SimulationSummary {
    pub runs: usize,
    pub seed: u64,
    /// A run counts once when any constraint fails.
    pub joint: ViolationEstimate,
    pub constraints: Vec<ConstraintViolation>,
}

fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write) -> anyhow::Result<i32> {
    if a.runs == 0 {
        bail!("--runs must be positive");
    }
    let problem = load_spec(&a.problem)?.build()?;
    let text = fs::read_to_string(&a.policy).with_context(|| format!("reading policy {}", a.policy.display()))?;
    let policy = PolicyFile::from_json_str(&text)?.to_policy()?;
    let (n, m, h) = (problem.model.n(), problem.model.m(), problem.model.horizon());
    let l = policy.layout();
    if (l.n, l.m, l.horizon) != (n, m, h) {
        bail!(
            "policy is for n={}, m={}, N={} but the problem has n={n}, m={m}, N={h}",
            l.n,
            l.m,
            l.horizon
        );
    }
    let batch = simulate_runs(&policy, &problem.model, a.runs, a.seed)?;
    if let Some(dir) = &a.csv {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("trajectories.csv");
        batch.write_csv(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?)?;
    }
    let constraints = problem
        .constraints
        .iter()
        .map(|c| {
            Ok(ConstraintViolation {
                name: c.name.clone(),
                alpha: c.relaxation.alpha(),
                estimate: estimate_violation(&batch, c.hard.as_hard())?,
            })
        })
        .collect::<crate::Result<Vec<_>>>()?;
    let joint = if problem.constraints.is_empty() {
        ViolationEstimate::from_counts(0, batch.len())?
    } else {
        benchmark::joint_violation(&problem, &batch)?
    };
    let summary = SimulationSummary { runs: a.runs, seed: a.seed, joint, constraints };
    let json = serde_json::to_string_pretty(&summary)?;
    if let Some(path) = &a.report {
        write_file(path, json.as_bytes())?;
    }
    writeln!(out, "{json}")?;
    Ok(EXIT_OPTIMAL)
}

fn cmd_beta_curves(a: &BetaCurvesArgs, out: &mut dyn Write) -> anyhow::Result<i32> {
    let rows = beta_curves(a.n, a.m, &a.rbar, a.nmax, Probability::new(a.alpha)?)?;
    match &a.csv {
        Some(path) => {
            let mut buf = Vec::new();
            write_beta_csv(&rows, &mut buf)?;
            write_file(path, &buf)?;
        }
        None => write_beta_csv(&rows, out)?,
    }
    Ok(EXIT_OPTIMAL)
}

#[derive(Debug, Serialize)]
pub struct LqgReport {
    /// `u(t) = -K(t) x(t)`.
    pub gains: Vec<Vec<Vec<f64>>>,
    pub values: Vec<Vec<Vec<f64>>>,
    pub expected_cost: f64,
}

fn cmd_lqg(a: &LqgArgs, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<i32> {
    let spec = load_spec(&a.problem)?;
    if !spec.constraints.is_empty() {
        writeln!(err, "warning: lqg ignores the {} constraint(s) in the problem", spec.constraints.len())?;
    }
    let Some((q, r)) = spec.cost.stage_weights(spec.horizon)? else {
        bail!("lqg needs per-stage weights Q(t), R(t); the problem gives a full weight matrix");
    };
    let mut unconstrained = spec.clone();
    unconstrained.constraints.clear();
    let problem = unconstrained.build()?;
    let model = &problem.model;
    let sol = lqg_riccati_stages(model.a(), model.b(), &q, &r)?;
    let policy = state_feedback_policy(model, &sol.gains)?;
    let report = LqgReport {
        gains: sol.gains.iter().map(to_rows).collect(),
        values: sol.values.iter().map(to_rows).collect(),
        expected_cost: expected_cost(&policy, &problem.cost, model, &problem.mats)?,
    };
    let json = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(path) => write_file(path, json.as_bytes())?,
        None => writeln!(out, "{json}")?,
    }
    Ok(EXIT_OPTIMAL)
}

fn cmd_benchmark(a: &BenchmarkArgs, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<i32> {
    let spec = benchmark::scenario_spec(a.scenario, a.alpha, a.bound);
    let problem = spec.build()?;
    let mut rows = Vec::new();
    let code = if a.sweep {
        let alphas = if a.alphas.is_empty() { benchmark::default_sweep() } else { a.alphas.clone() };
        rows.extend(benchmark::alpha_sweep(a.scenario, &alphas, a.bound)?);
        EXIT_OPTIMAL
    } else {
        let label = format!("{} alpha={}", a.scenario, a.alpha);
        let outcome = benchmark::run_scenario_detailed(&problem, &label, a.runs, a.seed)?;
        if let Some(dir) = &a.csv {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            write_file(&dir.join("problem.json"), spec.to_json().as_bytes())?;
            if let Some(p) = &outcome.policy {
                write_file(&dir.join("policy.json"), policy_json(p)?.as_bytes())?;
            }
            if let Some(b) = &outcome.batch {
                let mut buf = Vec::new();
                b.write_csv(&mut buf)?;
                write_file(&dir.join("trajectories.csv"), &buf)?;
            }
        }
        let code = status_code(outcome.row.status);
        rows.push(outcome.row);
        code
    };
    if a.lqg {
        writeln!(err, "note: the lqg-baseline row ignores the constraints during design")?;
        rows.push(benchmark::lqg_baseline(&problem, a.runs, a.seed)?);
    }
    match &a.table {
        Some(path) => {
            let mut buf = Vec::new();
            benchmark::write_table(&rows, &mut buf)?;
            write_file(path, &buf)?;
        }
        None => benchmark::write_table(&rows, out)?,
    }
    Ok(code)
}

/// Entry point of the binary.
pub fn main() -> i32 {
    run(std::env::args_os(), &mut io::stdout().lock(), &mut io::stderr().lock())
}
