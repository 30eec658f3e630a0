//! The `ndp` command line: solvers, generators, benchmarks and the advisor
//! service behind one binary. Data goes to standard output or `--out`;
//! progress and diagnostics go to standard error.

use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndp_core::bench::{self, BenchOptions};
use ndp_core::gen::{self, GenSpec};
use ndp_core::io::{read_mdp, read_policy, to_json, write_file, EvalFile, PolicyFile, ReportFile, SolveFile};
use ndp_core::{
    conservative_policy, enumerate_nonaugmentable, evaluate_worst_case, is_eps_optimal, search, solve_exact_with,
    solve_optimal, EpsKind, EpsMode, ExactConfig, Mdp, NdpError, Objective, PairOrdering, SearchConfig, SearchMode,
    DEFAULT_TOL,
};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "ndp", version, about = "Epsilon-optimal non-deterministic policies for finite MDPs")]
pub struct Cli {
    /// Suppress progress messages on standard error.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimal values, Q-values and a greedy optimal policy.
    Solve(SolveArgs),
    /// The conservative epsilon-optimal policy.
    Conservative(EpsArgs),
    /// Pruned search for a large non-augmentable policy.
    Search(SearchArgs),
    /// Branch-and-bound for a maximum-size policy.
    Exact(ExactArgs),
    /// Worst-case evaluation of a policy file.
    Eval(EvalArgs),
    /// Every non-augmentable epsilon-optimal policy of a small MDP.
    Enumerate(EpsArgs),
    /// Generate a seeded benchmark MDP.
    Gen(GenArgs),
    /// Run a benchmark preset and write CSV rows.
    Bench(BenchArgs),
    /// Start the advisor HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// MDP file (JSON).
    pub mdp: PathBuf,
    /// Convergence tolerance for value iteration.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    /// Output path; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EpsFlags {
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long, value_enum, default_value_t = EpsModeArg::Mult)]
    pub eps_mode: EpsModeArg,
}

impl EpsFlags {
    fn mode(&self) -> Result<EpsMode, NdpError> {
        EpsMode::new(self.eps_mode.into(), self.epsilon)
    }
}

#[derive(Debug, Args)]
pub struct EpsArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub eps: EpsFlags,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EpsModeArg {
    Mult,
    Add,
}

impl From<EpsModeArg> for EpsKind {
    fn from(m: EpsModeArg) -> Self {
        match m {
            EpsModeArg::Mult => EpsKind::Multiplicative,
            EpsModeArg::Add => EpsKind::Additive,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Full,
    Dag,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Size,
    LogSize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OrderingArg {
    QstarDesc,
    Index,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub eps: EpsFlags,
    #[arg(long, value_enum, default_value_t = ModeArg::Full)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Size)]
    pub objective: ObjectiveArg,
    #[arg(long, value_enum, default_value_t = OrderingArg::QstarDesc)]
    pub ordering: OrderingArg,
    /// Maximum number of feasibility probes.
    #[arg(long)]
    pub budget: Option<u64>,
    /// Wall-clock limit in seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
    /// Also write search statistics here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExactArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub eps: EpsFlags,
    /// Maximum number of branch-and-bound nodes.
    #[arg(long)]
    pub budget: Option<u64>,
    /// Wall-clock limit in seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
    /// Disable single-pair probing before branching.
    #[arg(long)]
    pub no_probing: bool,
    /// Also write solver statistics here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Policy file produced by `conservative`, `search` or `exact`.
    #[arg(long)]
    pub policy: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GenKindArg {
    Random51,
    LayeredDag,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum, default_value_t = GenKindArg::Random51)]
    pub kind: GenKindArg,
    #[arg(long, default_value_t = 5)]
    pub states: usize,
    #[arg(long, default_value_t = 4)]
    pub actions: usize,
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub width: usize,
    /// Generator seed; `NDP_SEED` is used when the flag is absent.
    #[arg(long, env = "NDP_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// fig5, fig6, fig7 or all.
    #[arg(long, default_value = "all")]
    pub preset: String,
    /// Number of instances per configuration.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    /// First seed; `NDP_SEED` is used when the flag is absent.
    #[arg(long, env = "NDP_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Timed runs per case; the fastest is kept.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long)]
    pub budget: Option<u64>,
    /// Wall-clock limit per run in seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
    /// CSV rows; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-figure summary JSON.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Directory served under `/ui/`.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

/// Failure of a subcommand; all map to exit code 1.
#[derive(Debug)]
pub enum CliError {
    Domain(NdpError),
    Io(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Domain(NdpError::InvalidMdp(violations)) => {
                writeln!(f, "invalid MDP ({} problems):", violations.len())?;
                for v in violations {
                    writeln!(f, "  - {v}")?;
                }
                Ok(())
            }
            CliError::Domain(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<NdpError> for CliError {
    fn from(e: NdpError) -> Self {
        CliError::Domain(e)
    }
}

/// Solver statistics for `exact --report`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExactReport {
    pub mdp_name: String,
    pub mode: EpsKind,
    pub epsilon: f64,
    pub objective: f64,
    pub size: usize,
    pub nodes: u64,
    pub probes: u64,
    pub fathomed: u64,
    pub proven_optimal: bool,
}

/// Output of `enumerate`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnumerationFile {
    pub mdp_name: String,
    pub mode: EpsKind,
    pub epsilon: f64,
    pub count: usize,
    pub policies: Vec<Vec<Vec<usize>>>,
}

struct Progress {
    quiet: bool,
}

impl Progress {
    fn say(&self, msg: impl fmt::Display) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => write_file(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn seconds(limit: Option<f64>) -> Result<Option<Duration>, CliError> {
    limit
        .map(|s| Duration::try_from_secs_f64(s).map_err(|e| CliError::Io(format!("invalid time limit {s}: {e}"))))
        .transpose()
}

fn load(common: &Common) -> Result<Mdp, CliError> {
    Ok(read_mdp(&common.mdp)?)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let progress = Progress { quiet: cli.quiet };
    match cli.command {
        Command::Solve(args) => {
            let mdp = load(&args.common)?;
            let sol = solve_optimal(&mdp, args.common.tol)?;
            progress.say(format_args!("solved {} in {} sweeps", mdp.name(), sol.log.sweeps()));
            emit(args.common.out.as_deref(), &to_json(&SolveFile::new(&mdp, &sol)))
        }
        Command::Conservative(args) => {
            let mdp = load(&args.common)?;
            let mode = args.eps.mode()?;
            let tol = args.common.tol;
            let vstar = solve_optimal(&mdp, tol)?.value;
            let pi = conservative_policy(&mdp, mode, &vstar, tol)?;
            let eval = evaluate_worst_case(&mdp, &pi, tol)?;
            progress.say(format_args!("conservative policy has {} pairs", pi.size()));
            emit(args.common.out.as_deref(), &to_json(&PolicyFile::new(&mdp, mode, &pi, &eval)))
        }
        Command::Search(args) => run_search(&args, &progress),
        Command::Exact(args) => {
            let mdp = load(&args.common)?;
            let mode = args.eps.mode()?;
            let mut cfg = ExactConfig::new(mode);
            cfg.tol = args.common.tol;
            cfg.node_budget = args.budget;
            cfg.time_limit = seconds(args.time_limit)?;
            cfg.probing = !args.no_probing;
            let result = solve_exact_with(&mdp, &cfg)?;
            progress.say(format_args!(
                "exact: size {} after {} nodes{}",
                result.policy.size(),
                result.nodes,
                if result.proven_optimal { "" } else { " (budget reached, not proven optimal)" }
            ));
            if let Some(path) = &args.report {
                let report = ExactReport {
                    mdp_name: mdp.name().to_string(),
                    mode: mode.kind,
                    epsilon: mode.epsilon,
                    objective: result.objective,
                    size: result.policy.size(),
                    nodes: result.nodes,
                    probes: result.probes,
                    fathomed: result.fathomed,
                    proven_optimal: result.proven_optimal,
                };
                write_file(path, &to_json(&report))?;
            }
            emit(args.common.out.as_deref(), &to_json(&PolicyFile::from_exact(&mdp, mode, &result)))
        }
        Command::Eval(args) => {
            let mdp = load(&args.common)?;
            let file = read_policy(&args.policy)?;
            let mode = file.eps_mode()?;
            let pi = file.policy(&mdp)?;
            let tol = args.common.tol;
            let vstar = solve_optimal(&mdp, tol)?.value;
            let eval = evaluate_worst_case(&mdp, &pi, tol)?;
            let out = EvalFile {
                mdp_name: mdp.name().to_string(),
                sets: pi.sets().to_vec(),
                size: pi.size(),
                worst_case_v: eval.v.as_slice().to_vec(),
                worst_case_q: eval.q.rows().to_vec(),
                eps_optimal: is_eps_optimal(&mdp, &pi, mode, &vstar, tol)?,
                mode: mode.kind,
                epsilon: mode.epsilon,
            };
            progress.say(format_args!("eps_optimal: {}", out.eps_optimal));
            emit(args.common.out.as_deref(), &to_json(&out))
        }
        Command::Enumerate(args) => {
            let mdp = load(&args.common)?;
            let mode = args.eps.mode()?;
            let mut cfg = SearchConfig::new(mode);
            cfg.tol = args.common.tol;
            let policies = enumerate_nonaugmentable(&mdp, &cfg)?;
            progress.say(format_args!("{} non-augmentable policies", policies.len()));
            let out = EnumerationFile {
                mdp_name: mdp.name().to_string(),
                mode: mode.kind,
                epsilon: mode.epsilon,
                count: policies.len(),
                policies: policies.iter().map(|p| p.sets().to_vec()).collect(),
            };
            emit(args.common.out.as_deref(), &to_json(&out))
        }
        Command::Gen(args) => {
            let spec = match args.kind {
                GenKindArg::Random51 => GenSpec::random51(args.states, args.actions, args.seed),
                GenKindArg::LayeredDag => GenSpec::layered_dag(args.layers, args.width, args.actions, args.seed),
            };
            let mdp = gen::generate(&spec)?;
            progress.say(format_args!("generated {}", mdp.name()));
            emit(args.out.as_deref(), &ndp_core::io::mdp_to_json(&mdp))
        }
        Command::Bench(args) => {
            let mut cases = bench::preset(&args.preset, args.seeds)?;
            for case in &mut cases {
                case.gen.seed += args.seed;
            }
            let opts = BenchOptions {
                jobs: args.jobs,
                time_limit: seconds(args.time_limit)?,
                node_budget: args.budget,
                repeats: args.repeats,
            };
            progress.say(format_args!("running {} cases on {} workers", cases.len(), opts.jobs.max(1)));
            let output = bench::run_bench(&cases, &opts)?;
            if let Some(path) = &args.plot {
                write_file(path, &to_json(&output.plot_data()))?;
            }
            emit(args.out.as_deref(), &output.to_csv())
        }
        Command::Serve(args) => {
            progress.say(format_args!("listening on http://{}", args.addr));
            ndp_service::serve_blocking(args.addr, args.ui_dir).map_err(|e| CliError::Io(e.to_string()))
        }
    }
}

fn run_search(args: &SearchArgs, progress: &Progress) -> Result<(), CliError> {
    let mdp = load(&args.common)?;
    let mode = args.eps.mode()?;
    let search_mode = match args.mode {
        ModeArg::Full => SearchMode::Full,
        ModeArg::Dag => SearchMode::Dag,
    };
    let objective = match args.objective {
        ObjectiveArg::Size => Objective::Size,
        ObjectiveArg::LogSize => Objective::LogSize,
    };
    let ordering = match args.ordering {
        OrderingArg::QstarDesc => PairOrdering::QstarDesc,
        OrderingArg::Index => PairOrdering::Index,
    };
    let mut cfg = SearchConfig::new(mode).with_mode(search_mode).with_objective(objective).with_ordering(ordering);
    cfg.tol = args.common.tol;
    cfg.node_budget = args.budget;
    cfg.time_limit = seconds(args.time_limit)?;
    let (report, complete) = match search(&mdp, &cfg) {
        Ok(r) => (r, true),
        Err(NdpError::BudgetExhausted(r)) => {
            progress.say("budget exhausted; writing the best policy found so far");
            (*r, false)
        }
        Err(e) => return Err(e.into()),
    };
    progress.say(format_args!(
        "search: size {} (conservative {}) after {} probes",
        report.policy.size(),
        report.conservative_size,
        report.nodes_expanded
    ));
    if let Some(path) = &args.report {
        let q_star = solve_optimal(&mdp, cfg.tol)?.q;
        let file = ReportFile::new(&mdp, mode, (search_mode, objective, ordering), &report, complete, &q_star)?;
        write_file(path, &to_json(&file))?;
    }
    emit(args.common.out.as_deref(), &to_json(&PolicyFile::new(&mdp, mode, &report.policy, &report.eval)))
}
