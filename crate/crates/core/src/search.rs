//! Depth-first searches for maximal epsilon-optimal policies.
//!
//! Both searches start from the conservative policy and only ever add
//! state-action pairs. A candidate that violates the epsilon bound is
//! dropped together with its whole subtree: violation is monotone under
//! augmentation.
//!
//! - [`search_full`] walks the pairs in a fixed order and recurses on every
//!   feasible augmentation with a later index, so each feasible superset of
//!   the conservative policy is visited exactly once.
//! - [`search_dag`] is for acyclic MDPs. Per state it only tries the
//!   excluded action with the highest worst-case Q-value, and it visits
//!   states deepest-first (reverse topological order), never returning to a
//!   state once it moved past it. On a DAG, adding actions at a state never
//!   changes the Q-values at that state or below it, so every non-augmentable
//!   policy found by the full search is still reachable this way.

use std::cmp::Ordering;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::exact::maximal_policies;
use crate::error::{NdpError, Result};
use crate::mdp::{check_tol, find_cycle, is_dag, solve_optimal, Mdp, DEFAULT_TOL};
use crate::policy::{
    conservative_policy, evaluate_worst_case, min_allowed, worst_case_values, EpsMode, NondetPolicy, WorstCaseEval,
};

/// Exhaustive enumeration is refused above this many state-action pairs.
pub const ENUMERATION_LIMIT: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Full,
    Dag,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Total number of allowed pairs.
    Size,
    /// `sum_s ln |P(s)|`, which favours spreading choice across states.
    LogSize,
}

impl Objective {
    pub fn value(self, pi: &NondetPolicy) -> f64 {
        match self {
            Objective::Size => pi.size() as f64,
            Objective::LogSize => pi.log_size(),
        }
    }

    fn of_counts(self, counts: &[usize]) -> f64 {
        match self {
            Objective::Size => counts.iter().sum::<usize>() as f64,
            Objective::LogSize => counts.iter().map(|&c| (c as f64).ln()).sum(),
        }
    }
}

/// Order in which the full search considers state-action pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairOrdering {
    /// Descending Q*(s, a), ties by `(s, a)`.
    QstarDesc,
    /// Plain `(s, a)` order.
    Index,
}

/// How a candidate augmentation is checked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMode {
    /// Full worst-case evaluation to tolerance.
    Exact,
    /// Only this many min-backup sweeps from the parent's values. Cheaper
    /// but approximate: it may accept infeasible candidates.
    Backups(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchConfig {
    pub mode: SearchMode,
    pub objective: Objective,
    pub ordering: PairOrdering,
    pub eps: EpsMode,
    /// Maximum number of probes; `None` is unlimited.
    pub node_budget: Option<u64>,
    pub time_limit: Option<Duration>,
    pub probe: ProbeMode,
    pub tol: f64,
}

impl SearchConfig {
    pub fn new(eps: EpsMode) -> Self {
        SearchConfig {
            mode: SearchMode::Full,
            objective: Objective::Size,
            ordering: PairOrdering::QstarDesc,
            eps,
            node_budget: None,
            time_limit: None,
            probe: ProbeMode::Exact,
            tol: DEFAULT_TOL,
        }
    }

    pub fn with_mode(mut self, mode: SearchMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_objective(mut self, objective: Objective) -> Self {
        self.objective = objective;
        self
    }

    pub fn with_ordering(mut self, ordering: PairOrdering) -> Self {
        self.ordering = ordering;
        self
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.node_budget = Some(budget);
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchReport {
    pub policy: NondetPolicy,
    pub objective_value: f64,
    /// Candidate augmentations probed, feasible or not.
    pub nodes_expanded: u64,
    /// Worst-case evaluations run, including the root.
    pub evaluations: u64,
    /// Epsilon-optimal policies visited, including the root.
    pub feasible_nodes: u64,
    pub wall_time: Duration,
    pub conservative_size: usize,
    /// Cold-start evaluation of `policy`.
    pub eval: WorstCaseEval,
}

impl SearchReport {
    /// Pairs added on top of the conservative policy.
    pub fn depth(&self) -> usize {
        self.policy.size() - self.conservative_size
    }
}

/// Dispatches on `cfg.mode`.
pub fn search(mdp: &Mdp, cfg: &SearchConfig) -> Result<SearchReport> {
    match cfg.mode {
        SearchMode::Full => search_full(mdp, cfg),
        SearchMode::Dag => search_dag(mdp, cfg),
    }
}

/// Full one-sided depth-first search over augmentations of the conservative
/// policy. With [`Objective::Size`] the result is a largest epsilon-optimal
/// policy among those containing the conservative policy; [`crate::solve_exact`]
/// covers the rest of the lattice.
pub fn search_full(mdp: &Mdp, cfg: &SearchConfig) -> Result<SearchReport> {
    let mut searcher = Searcher::new(mdp, cfg)?;
    let root = searcher.root_values.clone();
    let outcome = searcher.full(&root, 0);
    searcher.finish(outcome)
}

/// Argmax-only search for acyclic MDPs. Rejects MDPs with a cycle.
pub fn search_dag(mdp: &Mdp, cfg: &SearchConfig) -> Result<SearchReport> {
    let mut order = match is_dag(mdp) {
        Some(order) => order,
        None => return Err(NdpError::NotDag { cycle: find_cycle(mdp).unwrap_or_default() }),
    };
    order.reverse();
    let mut searcher = Searcher::new(mdp, cfg)?;
    let root = searcher.root_values.clone();
    let outcome = searcher.dag(&order, &root, 0);
    searcher.finish(outcome)
}

/// Every non-augmentable epsilon-optimal policy, sorted. Only for instances
/// with at most [`ENUMERATION_LIMIT`] pairs.
///
/// The whole policy lattice is covered, not only supersets of the
/// conservative policy: a non-augmentable policy can omit a pair that passes
/// the conservative test when one of its other actions fails that test.
pub fn enumerate_nonaugmentable(mdp: &Mdp, cfg: &SearchConfig) -> Result<Vec<NondetPolicy>> {
    if mdp.n_pairs() > ENUMERATION_LIMIT {
        return Err(NdpError::TooLarge { pairs: mdp.n_pairs(), limit: ENUMERATION_LIMIT });
    }
    check_tol(cfg.tol)?;
    maximal_policies(mdp, cfg.eps, cfg.tol)
}

/// Budget or deadline hit.
struct Stop;

struct Searcher<'a> {
    mdp: &'a Mdp,
    cfg: &'a SearchConfig,
    vstar: Vec<f64>,
    pairs: Vec<(usize, usize)>,
    mask: Vec<bool>,
    counts: Vec<usize>,
    root_values: Vec<f64>,
    conservative_size: usize,
    best_mask: Vec<bool>,
    best_value: f64,
    nodes: u64,
    evaluations: u64,
    feasible: u64,
    started: Instant,
}

impl<'a> Searcher<'a> {
    fn new(mdp: &'a Mdp, cfg: &'a SearchConfig) -> Result<Self> {
        let started = Instant::now();
        check_tol(cfg.tol)?;
        cfg.eps.check_mdp(mdp)?;
        let optimal = solve_optimal(mdp, cfg.tol)?;
        let conservative = conservative_policy(mdp, cfg.eps, &optimal.value, cfg.tol)?;

        let mut pairs: Vec<(usize, usize)> = mdp.pairs().collect();
        if cfg.ordering == PairOrdering::QstarDesc {
            pairs.sort_by(|&(s1, a1), &(s2, a2)| {
                optimal.q.get(s2, a2)
                    .partial_cmp(&optimal.q.get(s1, a1))
                    .unwrap_or(Ordering::Equal)
                    .then((s1, a1).cmp(&(s2, a2)))
            });
        }

        let mask = conservative.to_mask(mdp);
        let mut root_values = vec![0.0; mdp.n_states()];
        worst_case_values(mdp, &mask, cfg.tol, &mut root_values);
        let vstar = optimal.value.into_inner();
        if !cfg.eps.admits(&root_values, &vstar, cfg.tol) {
            return Err(NdpError::InvalidPolicy(
                "conservative policy failed the epsilon check; tolerance too loose?".into(),
            ));
        }
        let counts: Vec<usize> = conservative.sets().iter().map(Vec::len).collect();
        let best_value = cfg.objective.of_counts(&counts);
        Ok(Searcher {
            mdp,
            cfg,
            vstar,
            pairs,
            best_mask: mask.clone(),
            mask,
            counts,
            root_values,
            conservative_size: conservative.size(),
            best_value,
            nodes: 0,
            evaluations: 1,
            feasible: 1,
            started,
        })
    }

    fn out_of_budget(&self) -> bool {
        self.cfg.node_budget.is_some_and(|b| self.nodes >= b)
            || self.cfg.time_limit.is_some_and(|t| self.started.elapsed() >= t)
    }

    /// Adds `(s, a)` to the mask and evaluates. On success the pair stays in
    /// the mask and the caller must call [`Searcher::retract`].
    fn probe(&mut self, s: usize, a: usize, parent: &[f64]) -> std::result::Result<Option<Vec<f64>>, Stop> {
        if self.out_of_budget() {
            return Err(Stop);
        }
        self.nodes += 1;
        self.evaluations += 1;
        let idx = self.mdp.pair_index(s, a);
        self.mask[idx] = true;
        let mut v = parent.to_vec();
        match self.cfg.probe {
            ProbeMode::Exact => {
                worst_case_values(self.mdp, &self.mask, self.cfg.tol, &mut v);
            }
            ProbeMode::Backups(k) => {
                for _ in 0..k {
                    for state in (0..v.len()).rev() {
                        v[state] = min_allowed(self.mdp, &self.mask, state, &v);
                    }
                }
            }
        }
        if !self.cfg.eps.admits(&v, &self.vstar, self.cfg.tol) {
            self.mask[idx] = false;
            return Ok(None);
        }
        self.counts[s] += 1;
        self.feasible += 1;
        let value = self.cfg.objective.of_counts(&self.counts);
        if value > self.best_value {
            self.best_value = value;
            self.best_mask.copy_from_slice(&self.mask);
        }
        Ok(Some(v))
    }

    fn retract(&mut self, s: usize, a: usize) {
        self.mask[self.mdp.pair_index(s, a)] = false;
        self.counts[s] -= 1;
    }

    fn full(&mut self, v: &[f64], start: usize) -> std::result::Result<(), Stop> {
        for i in start..self.pairs.len() {
            let (s, a) = self.pairs[i];
            if self.mask[self.mdp.pair_index(s, a)] {
                continue;
            }
            if let Some(child) = self.probe(s, a, v)? {
                self.full(&child, i + 1)?;
                self.retract(s, a);
            }
        }
        Ok(())
    }

    fn dag(&mut self, order: &[usize], v: &[f64], start: usize) -> std::result::Result<(), Stop> {
        for (pos, &s) in order.iter().enumerate().skip(start) {
            if self.counts[s] == self.mdp.n_actions(s) {
                continue;
            }
            let base = self.mdp.pair_index(s, 0);
            let mut best: Option<(usize, f64)> = None;
            for a in (0..self.mdp.n_actions(s)).filter(|&a| !self.mask[base + a]) {
                let q = self.mdp.backup(s, a, v);
                if best.is_none_or(|(_, bq)| q > bq) {
                    best = Some((a, q));
                }
            }
            let (a, _) = best.expect("state has an excluded action");
            if let Some(child) = self.probe(s, a, v)? {
                self.dag(order, &child, pos)?;
                self.retract(s, a);
            }
        }
        Ok(())
    }

    fn report(&self) -> SearchReport {
        let policy = NondetPolicy::from_mask(self.mdp, &self.best_mask);
        let eval = evaluate_worst_case(self.mdp, &policy, self.cfg.tol).expect("search keeps policies valid");
        SearchReport {
            objective_value: self.cfg.objective.value(&policy),
            policy,
            nodes_expanded: self.nodes,
            evaluations: self.evaluations,
            feasible_nodes: self.feasible,
            wall_time: self.started.elapsed(),
            conservative_size: self.conservative_size,
            eval,
        }
    }

    fn finish(self, outcome: std::result::Result<(), Stop>) -> Result<SearchReport> {
        let report = self.report();
        match outcome {
            Ok(()) => Ok(report),
            Err(Stop) => Err(NdpError::BudgetExhausted(Box::new(report))),
        }
    }
}

/// Runs `k` min-backup sweeps, kept for callers that want the approximate
/// probe outside a search.
pub fn partial_worst_case(mdp: &Mdp, pi: &NondetPolicy, sweeps: usize, start: &[f64]) -> Result<Vec<f64>> {
    pi.check(mdp)?;
    let mask = pi.to_mask(mdp);
    let mut v = start.to_vec();
    if v.len() != mdp.n_states() {
        return Err(NdpError::ShapeMismatch("start vector length".into()));
    }
    for _ in 0..sweeps {
        for s in (0..v.len()).rev() {
            v[s] = min_allowed(mdp, &mask, s, &v);
        }
    }
    Ok(v)
}
