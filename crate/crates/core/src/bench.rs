//! Timing and size benchmarks over generated instances.

use std::collections::BTreeMap;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NdpError, Result};
use crate::exact::{solve_exact_with, ExactConfig};
use crate::gen::{generate, GenSpec};
use crate::policy::{EpsKind, EpsMode};
use crate::search::{search_dag, search_full, SearchConfig};

pub const CSV_HEADER: &str = "instance,states,pairs,epsilon,mode,algorithm,seed,wall_ms,policy_size,nodes,censored";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    SearchFull,
    SearchDag,
    SolveExact,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::SearchFull => "search_full",
            Algorithm::SearchDag => "search_dag",
            Algorithm::SolveExact => "solve_exact",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = NdpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "search_full" => Ok(Algorithm::SearchFull),
            "search_dag" => Ok(Algorithm::SearchDag),
            "solve_exact" => Ok(Algorithm::SolveExact),
            other => Err(NdpError::Format(format!("unknown algorithm {other:?}"))),
        }
    }
}

/// One benchmark cell member: an instance, an epsilon and an algorithm.
/// `group` names the figure the case feeds (`fig5`, `fig6`, `fig7`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchCase {
    pub group: String,
    pub gen: GenSpec,
    pub eps: EpsMode,
    pub algorithm: Algorithm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    #[serde(skip)]
    pub group: String,
    pub instance: String,
    pub states: usize,
    pub pairs: usize,
    pub epsilon: f64,
    pub mode: EpsKind,
    pub algorithm: Algorithm,
    pub seed: u64,
    /// Minimum over repeats; always positive.
    pub wall_ms: f64,
    pub policy_size: usize,
    /// Search probes or branch-and-bound nodes.
    pub nodes: u64,
    /// The time limit or node budget stopped the run.
    pub censored: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchOptions {
    /// Worker threads; each case is timed on one worker.
    pub jobs: usize,
    pub time_limit: Option<Duration>,
    pub node_budget: Option<u64>,
    /// Each case is run this many times and the fastest time is kept.
    pub repeats: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { jobs: 1, time_limit: None, node_budget: None, repeats: 1 }
    }
}

/// Aggregate of the rows sharing group, algorithm, mode, epsilon and shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub group: String,
    pub algorithm: Algorithm,
    pub mode: EpsKind,
    pub epsilon: f64,
    pub states: usize,
    pub pairs: usize,
    pub count: usize,
    pub censored: usize,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub median_size: f64,
    pub mean_size: f64,
    pub median_nodes: f64,
    pub mean_nodes: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchOutput {
    pub rows: Vec<BenchRow>,
    pub summary: Vec<SummaryCell>,
}

impl BenchOutput {
    pub fn to_csv(&self) -> String {
        rows_to_csv(&self.rows)
    }

    /// Summary cells keyed by group, always with `fig5`, `fig6` and `fig7`.
    pub fn plot_data(&self) -> serde_json::Value {
        let mut groups: BTreeMap<String, Vec<&SummaryCell>> =
            ["fig5", "fig6", "fig7"].iter().map(|g| (g.to_string(), Vec::new())).collect();
        for cell in &self.summary {
            groups.entry(cell.group.clone()).or_default().push(cell);
        }
        serde_json::to_value(groups).expect("summary cells serialize")
    }
}

pub fn run_bench(cases: &[BenchCase], opts: &BenchOptions) -> Result<BenchOutput> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| NdpError::Format(format!("worker pool: {e}")))?;
    let mut rows = pool.install(|| cases.par_iter().map(|case| run_case(case, opts)).collect::<Result<Vec<_>>>())?;
    rows.sort_by(|a, b| row_key(a).partial_cmp(&row_key(b)).expect("keys are finite"));
    let summary = summarize(&rows);
    Ok(BenchOutput { rows, summary })
}

fn row_key(r: &BenchRow) -> (&str, Algorithm, EpsKind, usize, usize, f64, u64, &str) {
    (&r.group, r.algorithm, r.mode, r.states, r.pairs, r.epsilon, r.seed, &r.instance)
}

pub fn run_case(case: &BenchCase, opts: &BenchOptions) -> Result<BenchRow> {
    let mdp = generate(&case.gen)?;
    let mut best: Option<(Duration, usize, u64, bool)> = None;
    for _ in 0..opts.repeats.max(1) {
        let run = match case.algorithm {
            Algorithm::SearchFull | Algorithm::SearchDag => {
                let mut cfg = SearchConfig::new(case.eps);
                cfg.node_budget = opts.node_budget;
                cfg.time_limit = opts.time_limit;
                let outcome = match case.algorithm {
                    Algorithm::SearchFull => search_full(&mdp, &cfg),
                    _ => search_dag(&mdp, &cfg),
                };
                match outcome {
                    Ok(r) => (r.wall_time, r.policy.size(), r.nodes_expanded, false),
                    Err(NdpError::BudgetExhausted(r)) => (r.wall_time, r.policy.size(), r.nodes_expanded, true),
                    Err(e) => return Err(e),
                }
            }
            Algorithm::SolveExact => {
                let mut cfg = ExactConfig::new(case.eps);
                cfg.node_budget = opts.node_budget;
                cfg.time_limit = opts.time_limit;
                let r = solve_exact_with(&mdp, &cfg)?;
                (r.wall_time, r.policy.size(), r.nodes, !r.proven_optimal)
            }
        };
        if best.is_none_or(|b| run.0 < b.0) {
            best = Some(run);
        }
    }
    let (time, policy_size, nodes, censored) = best.expect("at least one repeat");
    Ok(BenchRow {
        group: case.group.clone(),
        instance: case.gen.instance_name(),
        states: mdp.n_states(),
        pairs: mdp.n_pairs(),
        epsilon: case.eps.epsilon,
        mode: case.eps.kind,
        algorithm: case.algorithm,
        seed: case.gen.seed,
        wall_ms: (time.as_secs_f64() * 1e3).max(1e-6),
        policy_size,
        nodes,
        censored,
    })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

type CellKey = (String, Algorithm, EpsKind, usize, usize, u64);

/// Recomputes the summary from rows alone. Censored rows count at their
/// recorded values.
pub fn summarize(rows: &[BenchRow]) -> Vec<SummaryCell> {
    let mut cells: BTreeMap<CellKey, Vec<&BenchRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.group.clone(), r.algorithm, r.mode, r.states, r.pairs, r.epsilon.to_bits());
        cells.entry(key).or_default().push(r);
    }
    let mut out: Vec<SummaryCell> = cells
        .into_values()
        .map(|members| {
            let first = members[0];
            let ms: Vec<f64> = members.iter().map(|r| r.wall_ms).collect();
            let size: Vec<f64> = members.iter().map(|r| r.policy_size as f64).collect();
            let nodes: Vec<f64> = members.iter().map(|r| r.nodes as f64).collect();
            SummaryCell {
                group: first.group.clone(),
                algorithm: first.algorithm,
                mode: first.mode,
                epsilon: first.epsilon,
                states: first.states,
                pairs: first.pairs,
                count: members.len(),
                censored: members.iter().filter(|r| r.censored).count(),
                median_ms: median(&ms),
                mean_ms: mean(&ms),
                median_size: median(&size),
                mean_size: mean(&size),
                median_nodes: median(&nodes),
                mean_nodes: mean(&nodes),
            }
        })
        .collect();
    out.sort_by(|a, b| {
        (&a.group, a.algorithm, a.mode, a.states, a.pairs)
            .cmp(&(&b.group, b.algorithm, b.mode, b.states, b.pairs))
            .then(a.epsilon.total_cmp(&b.epsilon))
    });
    out
}

pub fn rows_to_csv(rows: &[BenchRow]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8");
    format!("{CSV_HEADER}\n{body}")
}

/// Multiplicative epsilons swept for the policy-size figure.
pub const FIG5_EPSILONS: [f64; 4] = [0.0, 0.01, 0.02, 0.03];
/// Action counts at 5 states for the pairs-scaling figure.
pub const FIG6_ACTIONS: [usize; 5] = [2, 3, 4, 5, 6];
/// Multiplicative epsilons swept for the running-time figure.
pub const FIG7_EPSILONS: [f64; 4] = [0.0, 0.005, 0.01, 0.02];

/// Cases for `fig5`, `fig6`, `fig7` or `all`, over seeds `0..seeds`.
pub fn preset(name: &str, seeds: u64) -> Result<Vec<BenchCase>> {
    let mult = |e: f64| EpsMode::multiplicative(e).expect("preset epsilons are valid");
    let mut cases = Vec::new();
    let mut add = |group: &str, gen: GenSpec, eps: f64, algorithm: Algorithm| {
        cases.push(BenchCase { group: group.into(), gen, eps: mult(eps), algorithm });
    };
    let want = |g: &str| name == g || name == "all";
    if !["fig5", "fig6", "fig7", "all"].contains(&name) {
        return Err(NdpError::Format(format!("unknown preset {name:?} (expected fig5, fig6, fig7 or all)")));
    }
    for seed in 0..seeds {
        if want("fig5") {
            for eps in FIG5_EPSILONS {
                add("fig5", GenSpec::random51(5, 4, seed), eps, Algorithm::SolveExact);
            }
        }
        if want("fig6") {
            for actions in FIG6_ACTIONS {
                add("fig6", GenSpec::random51(5, actions, seed), 0.01, Algorithm::SearchFull);
            }
        }
        if want("fig7") {
            for eps in FIG7_EPSILONS {
                add("fig7", GenSpec::random51(7, 5, seed), eps, Algorithm::SearchFull);
                add("fig7", GenSpec::random51(7, 5, seed), eps, Algorithm::SolveExact);
            }
        }
    }
    Ok(cases)
}
