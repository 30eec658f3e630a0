//! Finite MDPs: representation, validation and optimal solving.
//!
//! An [`Mdp`] can only be obtained from a [`RawMdp`] that passes the
//! structural checks of [`validate`], so every solver in the crate may rely
//! on well-formed transition rows and action sets. Negative mean rewards are
//! reported by [`validate`] but still accepted by the constructor: the
//! additive epsilon mode (and the evaluation-MDP construction, which negates
//! rewards) need them. Operations that require nonnegative rewards check for
//! them explicitly.
//!
//! A transition row may be empty. Such a state-action pair terminates the
//! episode: its value is its mean reward and nothing follows it. This is how
//! finite-horizon problems (and in particular acyclic ones) are expressed
//! without an absorbing self-loop.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{NdpError, Result};

/// Rows must sum to one within this bound.
pub const PROBABILITY_TOLERANCE: f64 = 1e-9;

/// Default fixed-point tolerance for every solver.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Hard cap on sweeps. Contraction guarantees convergence long before this
/// for any gamma < 1 that survives validation; the cap only guards against
/// floating-point limit cycles when `tol` is below the representable
/// resolution of the values.
const MAX_SWEEPS: usize = 5_000_000;

/// On-disk MDP document. Unchecked: pass it through [`validate`] or
/// `Mdp::try_from` before solving.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMdp {
    pub name: String,
    pub gamma: f64,
    pub states: Vec<String>,
    pub actions: Vec<Vec<String>>,
    /// `transitions[s][a]` is a list of `[next_index, prob]` pairs.
    pub transitions: Vec<Vec<Vec<(usize, f64)>>>,
    pub rewards: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
}

impl RawMdp {
    /// Builds a document with generated labels `s{i}` / `a{j}`.
    pub fn unlabeled(
        name: impl Into<String>,
        gamma: f64,
        transitions: Vec<Vec<Vec<(usize, f64)>>>,
        rewards: Vec<Vec<f64>>,
    ) -> Self {
        let states = (0..transitions.len()).map(|s| format!("s{s}")).collect();
        let actions = transitions
            .iter()
            .map(|row| (0..row.len()).map(|a| format!("a{a}")).collect())
            .collect();
        RawMdp {
            name: name.into(),
            gamma,
            states,
            actions,
            transitions,
            rewards,
            mu: None,
        }
    }
}

/// Where a violation was found. Indices are 0-based.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub field: &'static str,
    pub index: Vec<usize>,
    pub rule: Rule,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Rule {
    NoStates,
    LengthMismatch { expected: usize, found: usize },
    EmptyActionSet,
    InvalidNextState { next: usize },
    InvalidProbability { prob: f64 },
    ProbabilitySum { sum: f64 },
    NonFiniteReward { reward: f64 },
    NegativeReward { reward: f64 },
    GammaOutOfRange { gamma: f64 },
    NegativeWeight { weight: f64 },
    WeightSum { sum: f64 },
}

impl Violation {
    /// Structural violations make the document unusable. The only
    /// non-structural rule is a negative reward.
    pub fn is_structural(&self) -> bool {
        !matches!(self.rule, Rule::NegativeReward { .. })
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.field)?;
        for i in &self.index {
            write!(f, "[{i}]")?;
        }
        f.write_str(": ")?;
        match &self.rule {
            Rule::NoStates => write!(f, "no states"),
            Rule::LengthMismatch { expected, found } => {
                write!(f, "length {found}, expected {expected}")
            }
            Rule::EmptyActionSet => write!(f, "empty action set"),
            Rule::InvalidNextState { next } => write!(f, "next state {next} out of range"),
            Rule::InvalidProbability { prob } => write!(f, "invalid probability {prob}"),
            Rule::ProbabilitySum { sum } => write!(f, "probabilities sum to {sum}, expected 1"),
            Rule::NonFiniteReward { reward } => write!(f, "non-finite reward {reward}"),
            Rule::NegativeReward { reward } => write!(f, "negative reward {reward}"),
            Rule::GammaOutOfRange { gamma } => write!(f, "gamma {gamma} outside [0, 1)"),
            Rule::NegativeWeight { weight } => write!(f, "negative weight {weight}"),
            Rule::WeightSum { sum } => write!(f, "weights sum to {sum}, expected 1"),
        }
    }
}

/// Checks every invariant of an MDP document. Empty iff the document is
/// well formed and all mean rewards are nonnegative.
pub fn validate(raw: &RawMdp) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field, index: Vec<usize>, rule| out.push(Violation { field, index, rule });

    if !(0.0..1.0).contains(&raw.gamma) {
        push("gamma", vec![], Rule::GammaOutOfRange { gamma: raw.gamma });
    }
    let n = raw.states.len();
    if n == 0 {
        push("states", vec![], Rule::NoStates);
    }
    for (field, found) in [
        ("actions", raw.actions.len()),
        ("transitions", raw.transitions.len()),
        ("rewards", raw.rewards.len()),
    ] {
        if found != n {
            push(field, vec![], Rule::LengthMismatch { expected: n, found });
        }
    }

    let rows = n.min(raw.actions.len());
    for s in 0..rows {
        let n_actions = raw.actions[s].len();
        if n_actions == 0 {
            push("actions", vec![s], Rule::EmptyActionSet);
        }
        if let Some(row) = raw.transitions.get(s) {
            if row.len() != n_actions {
                push(
                    "transitions",
                    vec![s],
                    Rule::LengthMismatch { expected: n_actions, found: row.len() },
                );
            }
            for (a, entries) in row.iter().enumerate() {
                let mut sum = 0.0;
                for (k, &(next, prob)) in entries.iter().enumerate() {
                    if next >= n {
                        push("transitions", vec![s, a, k], Rule::InvalidNextState { next });
                    }
                    if !prob.is_finite() || prob < 0.0 {
                        push("transitions", vec![s, a, k], Rule::InvalidProbability { prob });
                    }
                    sum += prob;
                }
                if !entries.is_empty() && (sum.is_nan() || (sum - 1.0).abs() > PROBABILITY_TOLERANCE) {
                    push("transitions", vec![s, a], Rule::ProbabilitySum { sum });
                }
            }
        }
        if let Some(row) = raw.rewards.get(s) {
            if row.len() != n_actions {
                push(
                    "rewards",
                    vec![s],
                    Rule::LengthMismatch { expected: n_actions, found: row.len() },
                );
            }
            for (a, &reward) in row.iter().enumerate() {
                if !reward.is_finite() {
                    push("rewards", vec![s, a], Rule::NonFiniteReward { reward });
                } else if reward < 0.0 {
                    push("rewards", vec![s, a], Rule::NegativeReward { reward });
                }
            }
        }
    }

    if let Some(mu) = &raw.mu {
        if mu.len() != n {
            push("mu", vec![], Rule::LengthMismatch { expected: n, found: mu.len() });
        }
        for (s, &weight) in mu.iter().enumerate() {
            if !weight.is_finite() || weight < 0.0 {
                push("mu", vec![s], Rule::NegativeWeight { weight });
            }
        }
        let sum: f64 = mu.iter().sum();
        if sum.is_nan() || (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
            push("mu", vec![], Rule::WeightSum { sum });
        }
    }
    out
}

/// A validated finite MDP. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct Mdp {
    name: String,
    gamma: f64,
    state_labels: Vec<String>,
    action_labels: Vec<Vec<String>>,
    transitions: Vec<Vec<Vec<(usize, f64)>>>,
    rewards: Vec<Vec<f64>>,
    mu: Vec<f64>,
    offsets: Vec<usize>,
}

impl TryFrom<RawMdp> for Mdp {
    type Error = NdpError;

    fn try_from(raw: RawMdp) -> Result<Self> {
        let structural: Vec<_> = validate(&raw).into_iter().filter(Violation::is_structural).collect();
        if !structural.is_empty() {
            return Err(NdpError::InvalidMdp(structural));
        }
        let n = raw.states.len();
        let mu = raw.mu.unwrap_or_else(|| vec![1.0 / n as f64; n]);
        let mut offsets = Vec::with_capacity(n + 1);
        let mut total = 0;
        for row in &raw.rewards {
            offsets.push(total);
            total += row.len();
        }
        offsets.push(total);
        Ok(Mdp {
            name: raw.name,
            gamma: raw.gamma,
            state_labels: raw.states,
            action_labels: raw.actions,
            transitions: raw.transitions,
            rewards: raw.rewards,
            mu,
            offsets,
        })
    }
}

impl Mdp {
    pub fn to_raw(&self) -> RawMdp {
        RawMdp {
            name: self.name.clone(),
            gamma: self.gamma,
            states: self.state_labels.clone(),
            actions: self.action_labels.clone(),
            transitions: self.transitions.clone(),
            rewards: self.rewards.clone(),
            mu: Some(self.mu.clone()),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn n_states(&self) -> usize {
        self.rewards.len()
    }

    pub fn n_actions(&self, s: usize) -> usize {
        self.rewards[s].len()
    }

    /// Total number of state-action pairs.
    pub fn n_pairs(&self) -> usize {
        self.offsets[self.n_states()]
    }

    /// Position of `(s, a)` in a flat per-pair array.
    pub fn pair_index(&self, s: usize, a: usize) -> usize {
        self.offsets[s] + a
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_states()).flat_map(move |s| (0..self.n_actions(s)).map(move |a| (s, a)))
    }

    pub fn has_action(&self, s: usize, a: usize) -> bool {
        s < self.n_states() && a < self.n_actions(s)
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s][a]
    }

    pub fn rewards(&self) -> &[Vec<f64>] {
        &self.rewards
    }

    pub fn transitions(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[s][a]
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn state_label(&self, s: usize) -> &str {
        &self.state_labels[s]
    }

    pub fn action_label(&self, s: usize, a: usize) -> &str {
        &self.action_labels[s][a]
    }

    /// `(min, max)` over all mean rewards.
    pub fn reward_range(&self) -> (f64, f64) {
        self.rewards
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| (lo.min(r), hi.max(r)))
    }

    pub fn check_nonnegative_rewards(&self) -> Result<()> {
        for (s, a) in self.pairs() {
            let reward = self.reward(s, a);
            if reward < 0.0 {
                return Err(NdpError::NegativeReward { state: s, action: a, reward });
            }
        }
        Ok(())
    }

    /// `R(s,a) + gamma * sum_{s'} T(s,a,s') v(s')`.
    #[inline]
    pub fn backup(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        let future: f64 = self.transitions[s][a].iter().map(|&(next, p)| p * v[next]).sum();
        self.rewards[s][a] + self.gamma * future
    }

    /// Same as [`Mdp::backup`] with the successor values scaled by `scale`
    /// and shifted by `shift`: `R + gamma * sum T (scale * v + shift)`.
    pub(crate) fn shifted_backup(&self, s: usize, a: usize, v: &[f64], scale: f64, shift: f64) -> f64 {
        let future: f64 = self.transitions[s][a]
            .iter()
            .map(|&(next, p)| p * (scale * v[next] + shift))
            .sum();
        self.rewards[s][a] + self.gamma * future
    }

    /// Q-values of every pair against the value vector `v`.
    pub fn q_from_values(&self, v: &[f64]) -> QFunction {
        let values = (0..self.n_states())
            .map(|s| (0..self.n_actions(s)).map(|a| self.backup(s, a, v)).collect())
            .collect();
        QFunction { values }
    }
}

pub(crate) fn check_tol(tol: f64) -> Result<()> {
    if tol.is_finite() && tol > 0.0 {
        Ok(())
    } else {
        Err(NdpError::InvalidTolerance(tol))
    }
}

/// Per-state expected returns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValueFunction(Vec<f64>);

impl ValueFunction {
    pub fn new(values: Vec<f64>) -> Self {
        ValueFunction(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Index<usize> for ValueFunction {
    type Output = f64;

    fn index(&self, s: usize) -> &f64 {
        &self.0[s]
    }
}

/// Per-pair expected returns, ragged by state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QFunction {
    values: Vec<Vec<f64>>,
}

impl QFunction {
    pub fn new(values: Vec<Vec<f64>>) -> Self {
        QFunction { values }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s][a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Lowest-index argmax of each row.
    pub fn greedy(&self) -> DeterministicPolicy {
        DeterministicPolicy(self.values.iter().map(|row| argmax(row)).collect())
    }
}

/// Lowest index attaining the maximum.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (a, &q) in row.iter().enumerate().skip(1) {
        if q > row[best] {
            best = a;
        }
    }
    best
}

/// One action index per state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeterministicPolicy(Vec<usize>);

impl DeterministicPolicy {
    pub fn new(mdp: &Mdp, actions: Vec<usize>) -> Result<Self> {
        let pi = DeterministicPolicy(actions);
        pi.check(mdp)?;
        Ok(pi)
    }

    pub fn action(&self, s: usize) -> usize {
        self.0[s]
    }

    pub fn actions(&self) -> &[usize] {
        &self.0
    }

    fn check(&self, mdp: &Mdp) -> Result<()> {
        if self.0.len() != mdp.n_states() {
            return Err(NdpError::ShapeMismatch(format!(
                "policy covers {} states, MDP has {}",
                self.0.len(),
                mdp.n_states()
            )));
        }
        for (s, &a) in self.0.iter().enumerate() {
            if !mdp.has_action(s, a) {
                return Err(NdpError::InvalidAction { state: s, action: a });
            }
        }
        Ok(())
    }
}

/// Convergence record of a Gauss-Seidel fixed-point run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepLog {
    /// Max-norm change of each sweep, in order.
    pub deltas: Vec<f64>,
    /// Final Jacobi residual `max_s |B(v)(s) - v(s)|`.
    pub residual: f64,
}

impl SweepLog {
    pub fn sweeps(&self) -> usize {
        self.deltas.len()
    }
}

/// Gauss-Seidel iteration of `update` in place on `v`, sweeping states in
/// descending index order. Stops once a sweep moves no value by more than
/// `tol (1 - gamma) / gamma` and the Jacobi residual is at most `tol`.
pub(crate) fn gauss_seidel<F>(gamma: f64, v: &mut [f64], tol: f64, mut log: Option<&mut Vec<f64>>, update: F) -> f64
where
    F: Fn(usize, &[f64]) -> f64,
{
    let n = v.len();
    let stop = if gamma > 0.0 { tol * (1.0 - gamma) / gamma } else { f64::INFINITY };
    for _ in 0..MAX_SWEEPS {
        let mut delta = 0.0f64;
        for s in (0..n).rev() {
            let new = update(s, v);
            delta = delta.max((new - v[s]).abs());
            v[s] = new;
        }
        if let Some(log) = log.as_deref_mut() {
            log.push(delta);
        }
        if delta <= stop {
            let residual = jacobi_residual(v, &update);
            if residual <= tol || delta == 0.0 {
                return residual;
            }
        }
    }
    jacobi_residual(v, &update)
}

pub(crate) fn jacobi_residual<F>(v: &[f64], update: &F) -> f64
where
    F: Fn(usize, &[f64]) -> f64,
{
    (0..v.len()).map(|s| (update(s, v) - v[s]).abs()).fold(0.0, f64::max)
}

/// V*, Q* and the greedy optimal policy.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimalSolution {
    pub value: ValueFunction,
    pub q: QFunction,
    pub policy: DeterministicPolicy,
    pub log: SweepLog,
}

/// Solves the Bellman optimality equation by Gauss-Seidel value iteration.
///
/// The returned values have Bellman residual at most `tol`; the policy is
/// the lowest-index argmax of Q*. Bit-identical for identical inputs.
pub fn solve_optimal(mdp: &Mdp, tol: f64) -> Result<OptimalSolution> {
    check_tol(tol)?;
    let mut v = vec![0.0; mdp.n_states()];
    let mut deltas = Vec::new();
    let residual = gauss_seidel(mdp.gamma, &mut v, tol, Some(&mut deltas), |s, v| {
        (0..mdp.n_actions(s))
            .map(|a| mdp.backup(s, a, v))
            .fold(f64::NEG_INFINITY, f64::max)
    });
    let q = mdp.q_from_values(&v);
    let policy = q.greedy();
    Ok(OptimalSolution {
        value: ValueFunction(v),
        q,
        policy,
        log: SweepLog { deltas, residual },
    })
}

/// Value of a fixed deterministic policy (the plain Bellman equation).
pub fn evaluate_deterministic(mdp: &Mdp, pi: &DeterministicPolicy, tol: f64) -> Result<ValueFunction> {
    check_tol(tol)?;
    pi.check(mdp)?;
    let mut v = vec![0.0; mdp.n_states()];
    gauss_seidel(mdp.gamma, &mut v, tol, None, |s, v| mdp.backup(s, pi.action(s), v));
    Ok(ValueFunction(v))
}

fn successors(mdp: &Mdp, s: usize) -> impl Iterator<Item = usize> + '_ {
    (0..mdp.n_actions(s))
        .flat_map(move |a| mdp.transitions(s, a).iter())
        .filter(|&&(_, p)| p > 0.0)
        .map(|&(next, _)| next)
}

/// Topological order of the positive-probability transition graph, or
/// `None` if it has a cycle (a self-loop counts). Among ready states the
/// lowest index is emitted first, so layered generators come back in layer
/// order.
pub fn is_dag(mdp: &Mdp) -> Option<Vec<usize>> {
    let n = mdp.n_states();
    let mut indegree = vec![0usize; n];
    let edges: Vec<Vec<usize>> = (0..n)
        .map(|s| {
            let mut out: Vec<usize> = successors(mdp, s).collect();
            out.sort_unstable();
            out.dedup();
            for &next in &out {
                indegree[next] += 1;
            }
            out
        })
        .collect();
    let mut ready: BinaryHeap<Reverse<usize>> =
        (0..n).filter(|&s| indegree[s] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(s)) = ready.pop() {
        order.push(s);
        for &next in &edges[s] {
            indegree[next] -= 1;
            if indegree[next] == 0 {
                ready.push(Reverse(next));
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Some directed cycle of the transition graph, as a list of states whose
/// last element transitions back to the first.
pub fn find_cycle(mdp: &Mdp) -> Option<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Open,
        Done,
    }
    let n = mdp.n_states();
    let succ: Vec<Vec<usize>> = (0..n).map(|s| successors(mdp, s).collect()).collect();
    let mut mark = vec![Mark::New; n];
    let mut parent = vec![usize::MAX; n];
    for root in 0..n {
        if mark[root] != Mark::New {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        mark[root] = Mark::Open;
        while let Some(&mut (s, ref mut next_edge)) = stack.last_mut() {
            if let Some(&t) = succ[s].get(*next_edge) {
                *next_edge += 1;
                match mark[t] {
                    Mark::New => {
                        mark[t] = Mark::Open;
                        parent[t] = s;
                        stack.push((t, 0));
                    }
                    Mark::Open => {
                        let mut cycle = vec![s];
                        let mut cur = s;
                        while cur != t {
                            cur = parent[cur];
                            cycle.push(cur);
                        }
                        cycle.reverse();
                        return Some(cycle);
                    }
                    Mark::Done => {}
                }
            } else {
                mark[s] = Mark::Done;
                stack.pop();
            }
        }
    }
    None
}
