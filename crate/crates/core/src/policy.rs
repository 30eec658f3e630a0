//! Non-deterministic policies and their worst-case evaluation.
//!
//! A [`NondetPolicy`] allows a non-empty set of actions in every state. Its
//! value is the return obtained when an adversary picks the worst allowed
//! action at every step, computed as the fixed point of a min-backup:
//!
//! ```text
//! Q(s, a) = R(s, a) + gamma * sum_{s'} T(s, a, s') * min_{a' in P(s')} Q(s', a')
//! V(s)    = min_{a in P(s)} Q(s, a)
//! ```
//!
//! Adding actions can only lower these values, so "worst case within a
//! factor of optimal" is a monotone constraint: once a policy violates it,
//! every superset does too. The searches in [`crate::search`] and
//! [`crate::exact`] prune on exactly that.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{NdpError, Result};
use crate::mdp::{check_tol, gauss_seidel, DeterministicPolicy, Mdp, QFunction, ValueFunction};

/// Epsilon inequalities are tested with an additive slack of
/// `SLACK_FACTOR * tol` to absorb fixed-point error.
pub const SLACK_FACTOR: f64 = 4.0;

pub fn slack(tol: f64) -> f64 {
    SLACK_FACTOR * tol
}

/// Per-state sets of allowed actions, each sorted and non-empty.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NondetPolicy {
    sets: Vec<Vec<usize>>,
}

impl NondetPolicy {
    /// Sorts and deduplicates each set, then checks it against `mdp`.
    pub fn new(mdp: &Mdp, mut sets: Vec<Vec<usize>>) -> Result<Self> {
        for set in &mut sets {
            set.sort_unstable();
            set.dedup();
        }
        let pi = NondetPolicy { sets };
        pi.check(mdp)?;
        Ok(pi)
    }

    /// Every action in every state.
    pub fn full(mdp: &Mdp) -> Self {
        NondetPolicy {
            sets: (0..mdp.n_states()).map(|s| (0..mdp.n_actions(s)).collect()).collect(),
        }
    }

    pub fn from_deterministic(pi: &DeterministicPolicy) -> Self {
        NondetPolicy {
            sets: pi.actions().iter().map(|&a| vec![a]).collect(),
        }
    }

    pub(crate) fn from_mask(mdp: &Mdp, mask: &[bool]) -> Self {
        let sets = (0..mdp.n_states())
            .map(|s| (0..mdp.n_actions(s)).filter(|&a| mask[mdp.pair_index(s, a)]).collect())
            .collect();
        NondetPolicy { sets }
    }

    pub(crate) fn to_mask(&self, mdp: &Mdp) -> Vec<bool> {
        let mut mask = vec![false; mdp.n_pairs()];
        for (s, set) in self.sets.iter().enumerate() {
            for &a in set {
                mask[mdp.pair_index(s, a)] = true;
            }
        }
        mask
    }

    pub fn check(&self, mdp: &Mdp) -> Result<()> {
        if self.sets.len() != mdp.n_states() {
            return Err(NdpError::ShapeMismatch(format!(
                "policy covers {} states, MDP has {}",
                self.sets.len(),
                mdp.n_states()
            )));
        }
        for (s, set) in self.sets.iter().enumerate() {
            if set.is_empty() {
                return Err(NdpError::InvalidPolicy(format!("state {s} has an empty action set")));
            }
            if set.windows(2).any(|w| w[0] >= w[1]) {
                return Err(NdpError::InvalidPolicy(format!("state {s}: actions not sorted and unique")));
            }
            if let Some(&a) = set.iter().find(|&&a| !mdp.has_action(s, a)) {
                return Err(NdpError::InvalidAction { state: s, action: a });
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.sets.len()
    }

    pub fn set(&self, s: usize) -> &[usize] {
        &self.sets[s]
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn contains(&self, s: usize, a: usize) -> bool {
        self.sets[s].binary_search(&a).is_ok()
    }

    /// Total number of allowed state-action pairs.
    pub fn size(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }

    /// `sum_s ln |P(s)|`; zero for a deterministic policy.
    pub fn log_size(&self) -> f64 {
        self.sets.iter().map(|set| (set.len() as f64).ln()).sum()
    }

    /// Copy of `self` with `a` added to the set of `s`.
    pub fn augment(&self, mdp: &Mdp, s: usize, a: usize) -> Result<Self> {
        if !mdp.has_action(s, a) || s >= self.sets.len() {
            return Err(NdpError::InvalidAction { state: s, action: a });
        }
        let mut out = self.clone();
        if let Err(pos) = out.sets[s].binary_search(&a) {
            out.sets[s].insert(pos, a);
        }
        Ok(out)
    }

    /// Whether every set of `smaller` is a subset of the matching set here.
    pub fn includes(&self, smaller: &NondetPolicy) -> Result<bool> {
        if self.sets.len() != smaller.sets.len() {
            return Err(NdpError::ShapeMismatch(format!(
                "policies cover {} and {} states",
                self.sets.len(),
                smaller.sets.len()
            )));
        }
        Ok(self
            .sets
            .iter()
            .zip(&smaller.sets)
            .all(|(big, small)| small.iter().all(|a| big.binary_search(a).is_ok())))
    }
}

/// Worst-case values of a non-deterministic policy.
#[derive(Clone, Debug, PartialEq)]
pub struct WorstCaseEval {
    /// `V(s) = min_{a in P(s)} q(s, a)`, computed from `q`.
    pub v: ValueFunction,
    /// Right-hand side of the min-backup for every pair of the MDP, including
    /// actions outside the policy.
    pub q: QFunction,
    pub residual: f64,
}

impl WorstCaseEval {
    /// `(action, q)` for the actions the policy allows in `s`.
    pub fn selected<'a>(&'a self, pi: &'a NondetPolicy, s: usize) -> impl Iterator<Item = (usize, f64)> + 'a {
        pi.set(s).iter().map(move |&a| (a, self.q.get(s, a)))
    }
}

/// Min-backup fixed point over a membership mask, started from `v`.
pub(crate) fn worst_case_values(mdp: &Mdp, mask: &[bool], tol: f64, v: &mut [f64]) -> f64 {
    gauss_seidel(mdp.gamma(), v, tol, None, |s, v| min_allowed(mdp, mask, s, v))
}

#[inline]
pub(crate) fn min_allowed(mdp: &Mdp, mask: &[bool], s: usize, v: &[f64]) -> f64 {
    let base = mdp.pair_index(s, 0);
    (0..mdp.n_actions(s))
        .filter(|&a| mask[base + a])
        .map(|a| mdp.backup(s, a, v))
        .fold(f64::INFINITY, f64::min)
}

pub(crate) fn finish_eval(mdp: &Mdp, pi: &NondetPolicy, v: &[f64]) -> WorstCaseEval {
    let q = mdp.q_from_values(v);
    let values: Vec<f64> = (0..mdp.n_states())
        .map(|s| pi.set(s).iter().map(|&a| q.get(s, a)).fold(f64::INFINITY, f64::min))
        .collect();
    let residual = (0..mdp.n_states())
        .map(|s| {
            let next = pi.set(s).iter().map(|&a| mdp.backup(s, a, &values)).fold(f64::INFINITY, f64::min);
            (next - values[s]).abs()
        })
        .fold(0.0, f64::max);
    WorstCaseEval {
        v: ValueFunction::new(values),
        q,
        residual,
    }
}

/// Worst-case evaluation by min-backup value iteration restricted to the
/// policy's sets, started from zero.
pub fn evaluate_worst_case(mdp: &Mdp, pi: &NondetPolicy, tol: f64) -> Result<WorstCaseEval> {
    check_tol(tol)?;
    pi.check(mdp)?;
    let mask = pi.to_mask(mdp);
    let mut v = vec![0.0; mdp.n_states()];
    worst_case_values(mdp, &mask, tol, &mut v);
    Ok(finish_eval(mdp, pi, &v))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EpsKind {
    /// `V(s) >= (1 - eps) V*(s)`
    #[serde(rename = "mult")]
    Multiplicative,
    /// `V(s) >= V*(s) - eps`
    #[serde(rename = "add")]
    Additive,
}

impl EpsKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EpsKind::Multiplicative => "mult",
            EpsKind::Additive => "add",
        }
    }
}

impl fmt::Display for EpsKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EpsKind {
    type Err = NdpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mult" => Ok(EpsKind::Multiplicative),
            "add" => Ok(EpsKind::Additive),
            other => Err(NdpError::Format(format!("unknown epsilon mode {other:?} (expected mult or add)"))),
        }
    }
}

/// Near-optimality requirement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsMode {
    pub kind: EpsKind,
    pub epsilon: f64,
}

impl EpsMode {
    pub fn new(kind: EpsKind, epsilon: f64) -> Result<Self> {
        let ok = match kind {
            EpsKind::Multiplicative => (0.0..=1.0).contains(&epsilon),
            EpsKind::Additive => epsilon.is_finite() && epsilon >= 0.0,
        };
        if !ok {
            return Err(NdpError::InvalidEpsilon { mode: kind.as_str(), epsilon });
        }
        Ok(EpsMode { kind, epsilon })
    }

    pub fn multiplicative(epsilon: f64) -> Result<Self> {
        Self::new(EpsKind::Multiplicative, epsilon)
    }

    pub fn additive(epsilon: f64) -> Result<Self> {
        Self::new(EpsKind::Additive, epsilon)
    }

    /// Lowest admissible worst-case value at a state whose optimal value is
    /// `vstar`, before slack.
    pub fn threshold(&self, vstar: f64) -> f64 {
        match self.kind {
            EpsKind::Multiplicative => (1.0 - self.epsilon) * vstar,
            EpsKind::Additive => vstar - self.epsilon,
        }
    }

    /// Whether the worst-case values `v` satisfy the bound at every state.
    pub fn admits(&self, v: &[f64], vstar: &[f64], tol: f64) -> bool {
        let slack = slack(tol);
        v.iter().zip(vstar).all(|(&v, &vs)| v >= self.threshold(vs) - slack)
    }

    /// Multiplicative mode is only meaningful with nonnegative rewards.
    pub fn check_mdp(&self, mdp: &Mdp) -> Result<()> {
        match self.kind {
            EpsKind::Multiplicative => mdp.check_nonnegative_rewards(),
            EpsKind::Additive => Ok(()),
        }
    }
}

fn check_vstar(mdp: &Mdp, vstar: &ValueFunction) -> Result<()> {
    if vstar.len() != mdp.n_states() {
        return Err(NdpError::ShapeMismatch(format!(
            "value function has {} entries, MDP has {} states",
            vstar.len(),
            mdp.n_states()
        )));
    }
    Ok(())
}

/// Evaluates `pi` and tests the epsilon bound at every state.
pub fn is_eps_optimal(mdp: &Mdp, pi: &NondetPolicy, mode: EpsMode, vstar: &ValueFunction, tol: f64) -> Result<bool> {
    check_vstar(mdp, vstar)?;
    let eval = evaluate_worst_case(mdp, pi, tol)?;
    Ok(mode.admits(eval.v.as_slice(), vstar.as_slice(), tol))
}

/// Whether `pi` satisfies the bound and no single added pair keeps it.
pub fn is_non_augmentable(
    mdp: &Mdp,
    pi: &NondetPolicy,
    mode: EpsMode,
    vstar: &ValueFunction,
    tol: f64,
) -> Result<bool> {
    if !is_eps_optimal(mdp, pi, mode, vstar, tol)? {
        return Ok(false);
    }
    for (s, a) in mdp.pairs() {
        if pi.contains(s, a) {
            continue;
        }
        if is_eps_optimal(mdp, &pi.augment(mdp, s, a)?, mode, vstar, tol)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// The largest policy passing the per-pair sufficient test
///
/// ```text
/// mult: R(s,a) + gamma * sum T(s,a,s') (1 - eps) V*(s') >= (1 - eps) V*(s)
/// add:  R(s,a) + gamma * sum T(s,a,s') (V*(s') - eps)  >= V*(s) - eps
/// ```
///
/// Every action passing it keeps the worst case above the bound whatever the
/// other states allow, so the result is epsilon-optimal. It is not always
/// contained in every non-augmentable policy: a policy that keeps an action
/// failing the test elsewhere can lose room for one that passes it.
pub fn conservative_policy(mdp: &Mdp, mode: EpsMode, vstar: &ValueFunction, tol: f64) -> Result<NondetPolicy> {
    check_tol(tol)?;
    check_vstar(mdp, vstar)?;
    mode.check_mdp(mdp)?;
    let vs = vstar.as_slice();
    let (scale, shift) = match mode.kind {
        EpsKind::Multiplicative => (1.0 - mode.epsilon, 0.0),
        EpsKind::Additive => (1.0, -mode.epsilon),
    };
    let slack = slack(tol);
    let mut sets = Vec::with_capacity(mdp.n_states());
    for s in 0..mdp.n_states() {
        let bound = mode.threshold(vs[s]) - slack;
        let set: Vec<usize> = (0..mdp.n_actions(s))
            .filter(|&a| mdp.shifted_backup(s, a, vs, scale, shift) >= bound)
            .collect();
        if set.is_empty() {
            return Err(NdpError::InvalidPolicy(format!(
                "no action of state {s} passes the conservative test; is V* accurate?"
            )));
        }
        sets.push(set);
    }
    Ok(NondetPolicy { sets })
}

/// Smallest gap, over states with at least one excluded action, between the
/// worst included and the best excluded Q-value. `None` when the policy
/// excludes nothing.
pub fn margin(mdp: &Mdp, pi: &NondetPolicy, q: &QFunction) -> Result<Option<f64>> {
    pi.check(mdp)?;
    let mut out: Option<f64> = None;
    for s in 0..mdp.n_states() {
        let (mut worst_in, mut best_out) = (f64::INFINITY, f64::NEG_INFINITY);
        for (a, &value) in q.row(s).iter().enumerate() {
            if pi.contains(s, a) {
                worst_in = worst_in.min(value);
            } else {
                best_out = best_out.max(value);
            }
        }
        if best_out > f64::NEG_INFINITY {
            let gap = worst_in - best_out;
            out = Some(out.map_or(gap, |m| m.min(gap)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::mdp::solve_optimal;

    const TOL: f64 = 1e-9;

    fn sets(mdp: &Mdp, sets: &[&[usize]]) -> NondetPolicy {
        NondetPolicy::new(mdp, sets.iter().map(|s| s.to_vec()).collect()).unwrap()
    }

    #[test]
    fn sizes() {
        let mdp = fixtures::two_state_ab();
        assert_eq!(NondetPolicy::full(&mdp).size(), 3);
        assert_eq!(sets(&mdp, &[&[1, 0], &[0]]).size(), 3);
        let sol = solve_optimal(&mdp, TOL).unwrap();
        let det = NondetPolicy::from_deterministic(&sol.policy);
        assert_eq!(det.size(), 2);
        assert_eq!(det.log_size(), 0.0);
    }

    #[test]
    fn rejects_malformed_sets() {
        let mdp = fixtures::two_state_ab();
        assert!(matches!(
            NondetPolicy::new(&mdp, vec![vec![], vec![0]]),
            Err(NdpError::InvalidPolicy(_))
        ));
        assert!(matches!(
            NondetPolicy::new(&mdp, vec![vec![0], vec![1]]),
            Err(NdpError::InvalidAction { state: 1, action: 1 })
        ));
        assert!(matches!(NondetPolicy::new(&mdp, vec![vec![0]]), Err(NdpError::ShapeMismatch(_))));
    }

    #[test]
    fn augmentation() {
        let mdp = fixtures::two_state_ab();
        let pi = sets(&mdp, &[&[0], &[0]]);
        let same = pi.augment(&mdp, 0, 0).unwrap();
        assert_eq!(same.size(), pi.size());
        let bigger = pi.augment(&mdp, 0, 1).unwrap();
        assert_eq!(bigger.size(), pi.size() + 1);
        assert_eq!(pi.size(), 2, "input unchanged");
        assert!(bigger.includes(&pi).unwrap());
        assert!(!pi.includes(&bigger).unwrap());
        assert!(pi.includes(&pi).unwrap());
        assert!(pi.augment(&mdp, 1, 1).is_err());
    }

    #[test]
    fn disjoint_singletons_do_not_include() {
        let mdp = fixtures::two_state_ab();
        let a = sets(&mdp, &[&[0], &[0]]);
        let b = sets(&mdp, &[&[1], &[0]]);
        assert!(!a.includes(&b).unwrap());
        let other = fixtures::exclusive_options();
        assert!(matches!(
            NondetPolicy::full(&other).includes(&a),
            Err(NdpError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn worst_case_of_full_fixture() {
        let mdp = fixtures::two_state_ab();
        let eval = evaluate_worst_case(&mdp, &NondetPolicy::full(&mdp), TOL).unwrap();
        assert!((eval.v[0] - 0.95).abs() < 1e-9);
        assert_eq!(eval.v[1], 0.0);
        assert!(eval.residual <= TOL);
        let pi = NondetPolicy::full(&mdp);
        let qs: Vec<_> = eval.selected(&pi, 0).collect();
        assert_eq!(qs.len(), 2);
        assert!((qs[0].1 - 1.0).abs() < 1e-9 && (qs[1].1 - 0.95).abs() < 1e-9);
    }

    #[test]
    fn v_is_exact_min_of_selected_q() {
        let mdp = fixtures::exclusive_options();
        let pi = NondetPolicy::full(&mdp);
        let eval = evaluate_worst_case(&mdp, &pi, TOL).unwrap();
        for s in 0..mdp.n_states() {
            let min = eval.selected(&pi, s).map(|(_, q)| q).fold(f64::INFINITY, f64::min);
            assert_eq!(eval.v[s], min);
        }
    }

    #[test]
    fn eps_check_on_fixture() {
        let mdp = fixtures::two_state_ab();
        let vstar = solve_optimal(&mdp, TOL).unwrap().value;
        let both = sets(&mdp, &[&[0, 1], &[0]]);
        assert!(is_eps_optimal(&mdp, &both, EpsMode::multiplicative(0.1).unwrap(), &vstar, TOL).unwrap());
        assert!(!is_eps_optimal(&mdp, &both, EpsMode::multiplicative(0.01).unwrap(), &vstar, TOL).unwrap());
        assert!(is_eps_optimal(&mdp, &both, EpsMode::additive(0.05).unwrap(), &vstar, TOL).unwrap());
        assert!(!is_eps_optimal(&mdp, &both, EpsMode::additive(0.04).unwrap(), &vstar, TOL).unwrap());
    }

    #[test]
    fn epsilon_range() {
        assert!(EpsMode::multiplicative(1.5).is_err());
        assert!(EpsMode::multiplicative(-0.1).is_err());
        assert!(EpsMode::additive(3.0).is_ok());
        assert!(EpsMode::additive(f64::NAN).is_err());
        assert_eq!("mult".parse::<EpsKind>().unwrap(), EpsKind::Multiplicative);
        assert!("max".parse::<EpsKind>().is_err());
    }

    #[test]
    fn conservative_on_fixture() {
        let mdp = fixtures::two_state_ab();
        let vstar = solve_optimal(&mdp, TOL).unwrap().value;
        let c = conservative_policy(&mdp, EpsMode::multiplicative(0.1).unwrap(), &vstar, TOL).unwrap();
        assert_eq!(c.sets(), &[vec![0, 1], vec![0]]);
        let c0 = conservative_policy(&mdp, EpsMode::multiplicative(0.0).unwrap(), &vstar, TOL).unwrap();
        assert_eq!(c0.sets(), &[vec![0], vec![0]]);
    }

    #[test]
    fn conservative_rejects_negative_rewards_in_mult_mode() {
        let mut raw = fixtures::two_state_ab().to_raw();
        raw.rewards[0][1] = -1.0;
        let mdp = Mdp::try_from(raw).unwrap();
        let vstar = solve_optimal(&mdp, TOL).unwrap().value;
        assert!(matches!(
            conservative_policy(&mdp, EpsMode::multiplicative(0.1).unwrap(), &vstar, TOL),
            Err(NdpError::NegativeReward { .. })
        ));
        let c = conservative_policy(&mdp, EpsMode::additive(0.1).unwrap(), &vstar, TOL).unwrap();
        assert_eq!(c.set(0), &[0]);
    }

    #[test]
    fn conservative_exclusive_fixture_is_deterministic() {
        let mdp = fixtures::exclusive_options();
        let vstar = solve_optimal(&mdp, TOL).unwrap().value;
        let c = conservative_policy(&mdp, EpsMode::multiplicative(0.05).unwrap(), &vstar, TOL).unwrap();
        assert_eq!(c.size(), 3);
    }

    #[test]
    fn margin_on_fixture() {
        let mdp = fixtures::two_state_ab();
        let q = solve_optimal(&mdp, TOL).unwrap().q;
        let m = margin(&mdp, &sets(&mdp, &[&[0], &[0]]), &q).unwrap().unwrap();
        assert!((m - 0.05).abs() < 1e-9);
        assert_eq!(margin(&mdp, &NondetPolicy::full(&mdp), &q).unwrap(), None);
    }

    #[test]
    fn non_augmentability_probe() {
        let mdp = fixtures::exclusive_options();
        let vstar = solve_optimal(&mdp, TOL).unwrap().value;
        let mode = EpsMode::multiplicative(0.05).unwrap();
        let left = sets(&mdp, &[&[0], &[0, 1], &[0]]);
        let right = sets(&mdp, &[&[0, 1], &[0], &[0]]);
        let union = sets(&mdp, &[&[0, 1], &[0, 1], &[0]]);
        assert!(is_non_augmentable(&mdp, &left, mode, &vstar, TOL).unwrap());
        assert!(is_non_augmentable(&mdp, &right, mode, &vstar, TOL).unwrap());
        assert!(!is_eps_optimal(&mdp, &union, mode, &vstar, TOL).unwrap());
        let base = sets(&mdp, &[&[0], &[0], &[0]]);
        assert!(!is_non_augmentable(&mdp, &base, mode, &vstar, TOL).unwrap());
    }
}
