//! Exact maximal-size epsilon-optimal policies by branch-and-bound.
//!
//! The reference model is the mixed integer program
//!
//! ```text
//! max  mu^T V + (Vmax - Vmin) * sum_{s,a} P(s,a)
//! s.t. V(s) >= threshold(V*(s))                                  for all s
//!      sum_a P(s,a) >= 1                                          for all s
//!      V(s) <= R(s,a) + gamma sum_s' T(s,a,s') V(s') + Vmax (1 - P(s,a))
//!      P(s,a) in {0, 1}
//! ```
//!
//! with `Vmax = Rmax / (1 - gamma)` and `Vmin = Rmin / (1 - gamma)`. For a
//! fixed inclusion matrix the largest feasible `V` is the worst-case value of
//! the policy, so the program picks a largest epsilon-optimal policy and
//! breaks size ties by `mu^T V`. [`MipModel`] states the constraints
//! literally; [`solve_exact`] finds the same optimum without an LP solver.
//!
//! Branching fixes one pair at a time to "in" or "out", pairs taken in
//! descending Q* order with "in" explored first. A node is scored by an
//! optimistic value: states with an included action take the minimum over
//! their included actions, states with none yet take the maximum over the
//! actions not excluded. Every completion of the node has a worst-case value
//! no larger than this, so the node is fathomed when the optimistic value
//! already breaks the epsilon bound. Otherwise it is pruned when
//! `(included + undecided, mu^T optimistic)` cannot beat the incumbent.

use std::cmp::Ordering;
use std::time::{Duration, Instant};

use crate::error::{NdpError, Result};
use crate::mdp::{check_tol, gauss_seidel, solve_optimal, Mdp, ValueFunction, DEFAULT_TOL, PROBABILITY_TOLERANCE};
use crate::policy::{evaluate_worst_case, is_non_augmentable, slack, EpsMode, NondetPolicy};

/// Constants of the mixed integer program for one MDP and epsilon.
#[derive(Clone, Debug, PartialEq)]
pub struct MipModel {
    pub eps: EpsMode,
    pub vmax: f64,
    pub vmin: f64,
    pub mu: Vec<f64>,
    pub vstar: ValueFunction,
}

impl MipModel {
    /// `mu` defaults to uniform weights.
    pub fn new(mdp: &Mdp, eps: EpsMode, mu: Option<Vec<f64>>, tol: f64) -> Result<Self> {
        check_tol(tol)?;
        eps.check_mdp(mdp)?;
        let n = mdp.n_states();
        let mu = mu.unwrap_or_else(|| vec![1.0 / n as f64; n]);
        if mu.len() != n {
            return Err(NdpError::ShapeMismatch(format!("mu has {} entries, MDP has {n} states", mu.len())));
        }
        let sum: f64 = mu.iter().sum();
        if mu.iter().any(|&w| w.is_nan() || w < 0.0) || (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(NdpError::InvalidPolicy(format!("mu must be a distribution (sum {sum})")));
        }
        let (rmin, rmax) = mdp.reward_range();
        let horizon = 1.0 / (1.0 - mdp.gamma());
        Ok(MipModel {
            eps,
            vmax: rmax * horizon,
            vmin: rmin * horizon,
            mu,
            vstar: solve_optimal(mdp, tol)?.value,
        })
    }

    pub fn weighted_value(&self, v: &[f64]) -> f64 {
        self.mu.iter().zip(v).map(|(w, v)| w * v).sum()
    }

    /// `mu^T V + (Vmax - Vmin) |P|`.
    pub fn objective(&self, size: usize, v: &[f64]) -> f64 {
        self.weighted_value(v) + (self.vmax - self.vmin) * size as f64
    }

    /// Checks `(V, P)` against every constraint row, each relaxed by `tol`.
    pub fn satisfies(&self, mdp: &Mdp, pi: &NondetPolicy, v: &[f64], tol: f64) -> bool {
        if pi.check(mdp).is_err() || v.len() != mdp.n_states() {
            return false;
        }
        let slack = slack(tol);
        let bound_ok = (0..mdp.n_states()).all(|s| v[s] >= self.eps.threshold(self.vstar[s]) - slack);
        let bellman_ok = mdp.pairs().all(|(s, a)| {
            let relax = if pi.contains(s, a) { 0.0 } else { self.vmax };
            v[s] <= mdp.backup(s, a, v) + relax + slack
        });
        bound_ok && bellman_ok
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExactConfig {
    pub eps: EpsMode,
    pub mu: Option<Vec<f64>>,
    /// Maximum number of branch-and-bound nodes.
    pub node_budget: Option<u64>,
    pub time_limit: Option<Duration>,
    pub tol: f64,
    /// Keep a record of every fathomed node.
    pub record_fathomed: bool,
    /// Before branching, fix to "out" every open pair whose inclusion alone
    /// already breaks the bound.
    pub probing: bool,
}

impl ExactConfig {
    pub fn new(eps: EpsMode) -> Self {
        ExactConfig {
            eps,
            mu: None,
            node_budget: None,
            time_limit: None,
            tol: DEFAULT_TOL,
            record_fathomed: false,
            probing: true,
        }
    }
}

/// Fixed decisions at a node that was fathomed on the epsilon bound.
#[derive(Clone, Debug, PartialEq)]
pub struct FathomRecord {
    pub included: Vec<Vec<usize>>,
    pub excluded: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExactResult {
    pub policy: NondetPolicy,
    /// `mu^T V + (Vmax - Vmin) |P|` at the returned policy.
    pub objective: f64,
    /// Worst-case values of `policy`.
    pub v: ValueFunction,
    pub nodes: u64,
    /// Single-pair inclusion tests made while probing.
    pub probes: u64,
    /// False when the budget stopped the search before it was exhaustive.
    pub proven_optimal: bool,
    pub fathomed: u64,
    pub fathom_log: Vec<FathomRecord>,
    pub wall_time: Duration,
}

/// Largest epsilon-optimal policy, ties broken by `mu^T V`.
pub fn solve_exact(mdp: &Mdp, mode: EpsMode, mu: Option<Vec<f64>>, budget: Option<u64>) -> Result<ExactResult> {
    let mut cfg = ExactConfig::new(mode);
    cfg.mu = mu;
    cfg.node_budget = budget;
    solve_exact_with(mdp, &cfg)
}

pub fn solve_exact_with(mdp: &Mdp, cfg: &ExactConfig) -> Result<ExactResult> {
    let started = Instant::now();
    let model = MipModel::new(mdp, cfg.eps, cfg.mu.clone(), cfg.tol)?;
    let mut bnb = Bnb::new(mdp, cfg, &model, started);
    let root = model.vstar.as_slice().to_vec();
    let proven_optimal = bnb.node(&root).is_ok();

    let (nodes, probes, fathomed) = (bnb.nodes, bnb.probes, bnb.fathomed);
    let fathom_log = std::mem::take(&mut bnb.fathom_log);
    let policy = match bnb.incumbent.take() {
        Some(best) => NondetPolicy::from_mask(mdp, &best.mask),
        // Only reachable when the budget stops the search before the first
        // leaf; fall back to the optimal deterministic policy.
        None => NondetPolicy::from_deterministic(&mdp.q_from_values(model.vstar.as_slice()).greedy()),
    };
    let eval = evaluate_worst_case(mdp, &policy, cfg.tol)?;
    Ok(ExactResult {
        objective: model.objective(policy.size(), eval.v.as_slice()),
        v: eval.v,
        policy,
        nodes,
        probes,
        proven_optimal,
        fathomed,
        fathom_log,
        wall_time: started.elapsed(),
    })
}

/// Every epsilon-optimal policy that no single augmentation keeps
/// epsilon-optimal, in increasing order of their sets.
pub(crate) fn maximal_policies(mdp: &Mdp, eps: EpsMode, tol: f64) -> Result<Vec<NondetPolicy>> {
    let mut cfg = ExactConfig::new(eps);
    cfg.tol = tol;
    let model = MipModel::new(mdp, eps, None, tol)?;
    let mut bnb = Bnb::new(mdp, &cfg, &model, Instant::now());
    bnb.collected = Some(Vec::new());
    let root = model.vstar.as_slice().to_vec();
    if bnb.node(&root).is_err() {
        unreachable!("enumeration runs without a budget");
    }
    let mut out: Vec<NondetPolicy> =
        bnb.collected.take().unwrap_or_default().iter().map(|mask| NondetPolicy::from_mask(mdp, mask)).collect();
    out.sort();
    Ok(out)
}

fn pair_order(mdp: &Mdp, model: &MipModel) -> Vec<(usize, usize)> {
    let q = mdp.q_from_values(model.vstar.as_slice());
    let mut order: Vec<(usize, usize)> = mdp.pairs().collect();
    order.sort_by(|&(s1, a1), &(s2, a2)| {
        q.get(s2, a2)
            .partial_cmp(&q.get(s1, a1))
            .unwrap_or(Ordering::Equal)
            .then((s1, a1).cmp(&(s2, a2)))
    });
    order
}

/// Whether no single augmentation of the result stays epsilon-optimal.
pub fn verify_nonaugmentable(mdp: &Mdp, result: &ExactResult, mode: EpsMode) -> Result<bool> {
    let vstar = solve_optimal(mdp, DEFAULT_TOL)?.value;
    is_non_augmentable(mdp, &result.policy, mode, &vstar, DEFAULT_TOL)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Decision {
    Open,
    In,
    Out,
}

struct Incumbent {
    size: usize,
    weighted: f64,
    mask: Vec<bool>,
}

struct Stop;

struct Bnb<'a> {
    mdp: &'a Mdp,
    cfg: &'a ExactConfig,
    model: &'a MipModel,
    order: Vec<(usize, usize)>,
    status: Vec<Decision>,
    included: Vec<usize>,
    allowed: Vec<usize>,
    included_total: usize,
    open_total: usize,
    incumbent: Option<Incumbent>,
    /// Collects every maximal feasible policy instead of optimizing.
    collected: Option<Vec<Vec<bool>>>,
    nodes: u64,
    probes: u64,
    fathomed: u64,
    fathom_log: Vec<FathomRecord>,
    started: Instant,
}

impl<'a> Bnb<'a> {
    fn new(mdp: &'a Mdp, cfg: &'a ExactConfig, model: &'a MipModel, started: Instant) -> Self {
        let n = mdp.n_states();
        Bnb {
            mdp,
            cfg,
            model,
            order: pair_order(mdp, model),
            status: vec![Decision::Open; mdp.n_pairs()],
            included: vec![0; n],
            allowed: (0..n).map(|s| mdp.n_actions(s)).collect(),
            included_total: 0,
            open_total: mdp.n_pairs(),
            incumbent: None,
            collected: None,
            nodes: 0,
            probes: 0,
            fathomed: 0,
            fathom_log: Vec::new(),
            started,
        }
    }

    fn optimistic(&self, s: usize, v: &[f64]) -> f64 {
        let base = self.mdp.pair_index(s, 0);
        let actions = 0..self.mdp.n_actions(s);
        if self.included[s] > 0 {
            actions
                .filter(|&a| self.status[base + a] == Decision::In)
                .map(|a| self.mdp.backup(s, a, v))
                .fold(f64::INFINITY, f64::min)
        } else {
            actions
                .filter(|&a| self.status[base + a] != Decision::Out)
                .map(|a| self.mdp.backup(s, a, v))
                .fold(f64::NEG_INFINITY, f64::max)
        }
    }

    fn set(&mut self, s: usize, a: usize, to: Decision) {
        let idx = self.mdp.pair_index(s, a);
        match self.status[idx] {
            Decision::Open => self.open_total -= 1,
            Decision::In => {
                self.included[s] -= 1;
                self.included_total -= 1;
            }
            Decision::Out => self.allowed[s] += 1,
        }
        match to {
            Decision::Open => self.open_total += 1,
            Decision::In => {
                self.included[s] += 1;
                self.included_total += 1;
            }
            Decision::Out => self.allowed[s] -= 1,
        }
        self.status[idx] = to;
    }

    fn fathom(&mut self) {
        self.fathomed += 1;
        if self.cfg.record_fathomed {
            let pick = |want: Decision| -> Vec<Vec<usize>> {
                (0..self.mdp.n_states())
                    .map(|s| {
                        (0..self.mdp.n_actions(s))
                            .filter(|&a| self.status[self.mdp.pair_index(s, a)] == want)
                            .collect()
                    })
                    .collect()
            };
            let record = FathomRecord { included: pick(Decision::In), excluded: pick(Decision::Out) };
            self.fathom_log.push(record);
        }
    }

    fn relax(&self, v: &mut [f64]) -> bool {
        if self.allowed.contains(&0) {
            return false;
        }
        gauss_seidel(self.mdp.gamma(), v, self.cfg.tol, None, |s, v| self.optimistic(s, v));
        self.model.eps.admits(v, self.model.vstar.as_slice(), self.cfg.tol)
    }

    /// Fixes to "out" every open pair whose inclusion alone breaks the bound,
    /// repeating until nothing changes. Returns the fixed pairs and whether
    /// the node is still feasible.
    fn propagate(&mut self, v: &mut [f64]) -> (Vec<(usize, usize)>, bool) {
        let mut fixed = Vec::new();
        loop {
            let mut changed = false;
            for i in 0..self.order.len() {
                let (s, a) = self.order[i];
                if self.status[self.mdp.pair_index(s, a)] != Decision::Open {
                    continue;
                }
                self.probes += 1;
                self.set(s, a, Decision::In);
                let mut trial = v.to_vec();
                let ok = self.relax(&mut trial);
                if ok {
                    self.set(s, a, Decision::Open);
                } else {
                    self.set(s, a, Decision::Out);
                    fixed.push((s, a));
                    changed = true;
                }
            }
            if !changed {
                return (fixed, true);
            }
            if !self.relax(v) {
                return (fixed, false);
            }
        }
    }

    fn node(&mut self, parent: &[f64]) -> std::result::Result<(), Stop> {
        if self.cfg.node_budget.is_some_and(|b| self.nodes >= b)
            || self.cfg.time_limit.is_some_and(|t| self.started.elapsed() >= t)
        {
            return Err(Stop);
        }
        self.nodes += 1;
        let mut v = parent.to_vec();
        if !self.relax(&mut v) {
            self.fathom();
            return Ok(());
        }
        let (fixed, feasible) = if self.cfg.probing { self.propagate(&mut v) } else { (Vec::new(), true) };
        let outcome = if feasible { self.branch(&v) } else {
            self.fathom();
            Ok(())
        };
        for &(s, a) in fixed.iter().rev() {
            self.set(s, a, Decision::Open);
        }
        outcome
    }

    /// At a leaf: whether no excluded pair can be added.
    fn is_maximal(&mut self, v: &[f64]) -> bool {
        let excluded: Vec<(usize, usize)> =
            self.mdp.pairs().filter(|&(s, a)| self.status[self.mdp.pair_index(s, a)] == Decision::Out).collect();
        excluded.into_iter().all(|(s, a)| {
            self.set(s, a, Decision::In);
            let mut trial = v.to_vec();
            let feasible = self.relax(&mut trial);
            self.set(s, a, Decision::Out);
            !feasible
        })
    }

    fn branch(&mut self, v: &[f64]) -> std::result::Result<(), Stop> {
        let bound = self.included_total + self.open_total;
        let weighted = self.model.weighted_value(v);
        if self.collected.is_some() {
            // Enumeration explores every feasible leaf.
        } else if let Some(best) = &self.incumbent {
            let improves = bound > best.size || (bound == best.size && weighted > best.weighted);
            if !improves {
                return Ok(());
            }
        }
        let next = self.order.iter().copied().find(|&(s, a)| self.status[self.mdp.pair_index(s, a)] == Decision::Open);
        let Some((s, a)) = next else {
            let mask: Vec<bool> = self.status.iter().map(|&d| d == Decision::In).collect();
            if self.collected.is_some() {
                if self.is_maximal(v) {
                    self.collected.as_mut().expect("collecting").push(mask);
                }
            } else {
                self.incumbent = Some(Incumbent { size: self.included_total, weighted, mask });
            }
            return Ok(());
        };
        self.set(s, a, Decision::In);
        let included = self.node(v);
        if included.is_ok() {
            self.set(s, a, Decision::Out);
            let excluded = self.node(v);
            self.set(s, a, Decision::Open);
            excluded
        } else {
            self.set(s, a, Decision::Open);
            included
        }
    }
}
