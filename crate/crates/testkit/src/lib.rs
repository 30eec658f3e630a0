//! Brute-force reference computations for tests.
//!
//! Nothing here calls the min-backup evaluator or the searches of
//! `ndp-core`; values come from dense linear solves and exhaustive
//! enumeration so they can check those code paths independently.

use nalgebra::{DMatrix, DVector};
use ndp_core::mdp::{Mdp, RawMdp};
use ndp_core::{solve_optimal, EpsKind, EpsMode, NondetPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Feasibility slack matching the library's `4 * tol` at `tol = 1e-9`.
pub const SLACK: f64 = 4e-9;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random MDP with `n` states and `m` actions per state. Each row puts
/// random weight on up to `fanout` distinct next states; rewards uniform on
/// `[0, 1)`; gamma uniform on `[0.5, 0.95)`.
pub fn random_mdp(rng: &mut ChaCha8Rng, n: usize, m: usize, fanout: usize) -> Mdp {
    let mut transitions = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    for _ in 0..n {
        let mut rows = Vec::with_capacity(m);
        let mut rs = Vec::with_capacity(m);
        for _ in 0..m {
            let k = rng.random_range(1..=fanout.min(n));
            let mut targets: Vec<usize> = (0..n).collect();
            for i in 0..k {
                let j = rng.random_range(i..n);
                targets.swap(i, j);
            }
            let weights: Vec<f64> = (0..k).map(|_| 1.0 - rng.random::<f64>()).collect();
            let total: f64 = weights.iter().sum();
            let mut row: Vec<(usize, f64)> = targets[..k].iter().zip(&weights).map(|(&t, w)| (t, w / total)).collect();
            let head: f64 = row[..k - 1].iter().map(|&(_, p)| p).sum();
            row[k - 1].1 = 1.0 - head;
            rows.push(row);
            rs.push(rng.random::<f64>());
        }
        transitions.push(rows);
        rewards.push(rs);
    }
    let gamma = rng.random_range(0.5..0.95);
    Mdp::try_from(RawMdp::unlabeled(String::from("random"), gamma, transitions, rewards)).expect("generated MDP is valid")
}

/// Random non-empty action set per state.
pub fn random_policy(rng: &mut ChaCha8Rng, mdp: &Mdp) -> NondetPolicy {
    let sets = (0..mdp.n_states())
        .map(|s| {
            let m = mdp.n_actions(s);
            let mask = rng.random_range(1..(1u32 << m));
            (0..m).filter(|&a| mask >> a & 1 == 1).collect()
        })
        .collect();
    NondetPolicy::new(mdp, sets).expect("sets are non-empty and in range")
}

/// Value of a deterministic policy from `(I - gamma P) V = R`.
pub fn policy_value_linear(mdp: &Mdp, actions: &[usize]) -> Vec<f64> {
    let n = mdp.n_states();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..n {
        let act = actions[s];
        b[s] = mdp.reward(s, act);
        for &(t, p) in mdp.transitions(s, act) {
            a[(s, t)] -= mdp.gamma() * p;
        }
    }
    let x = a.lu().solve(&b).expect("I - gamma P is nonsingular for gamma < 1");
    x.iter().copied().collect()
}

/// Calls `f` on every deterministic policy, in mixed-radix order with state
/// 0 varying fastest.
pub fn for_each_deterministic(mdp: &Mdp, mut f: impl FnMut(&[usize])) {
    let n = mdp.n_states();
    let mut actions = vec![0usize; n];
    loop {
        f(&actions);
        let mut s = 0;
        loop {
            if s == n {
                return;
            }
            actions[s] += 1;
            if actions[s] < mdp.n_actions(s) {
                break;
            }
            actions[s] = 0;
            s += 1;
        }
    }
}

/// V* as the pointwise maximum over all deterministic policy values.
pub fn brute_vstar(mdp: &Mdp) -> Vec<f64> {
    let mut best = vec![f64::NEG_INFINITY; mdp.n_states()];
    for_each_deterministic(mdp, |pi| {
        for (b, v) in best.iter_mut().zip(policy_value_linear(mdp, pi)) {
            *b = b.max(v);
        }
    });
    best
}

/// One-step lookahead `R(s,a) + gamma sum T v` computed locally.
pub fn lookahead(mdp: &Mdp, s: usize, a: usize, v: &[f64]) -> f64 {
    mdp.reward(s, a) + mdp.gamma() * mdp.transitions(s, a).iter().map(|&(t, p)| p * v[t]).sum::<f64>()
}

pub fn q_table(mdp: &Mdp, v: &[f64]) -> Vec<Vec<f64>> {
    (0..mdp.n_states()).map(|s| (0..mdp.n_actions(s)).map(|a| lookahead(mdp, s, a, v)).collect()).collect()
}

/// Worst-case values via the evaluation MDP: restrict actions to the policy,
/// negate rewards, solve for the optimum and negate back. Returns `V` and
/// `Q` for every pair of the original MDP.
pub fn worst_case_by_negation(mdp: &Mdp, pi: &NondetPolicy, tol: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = mdp.n_states();
    let mut raw = RawMdp {
        name: format!("{}-evaluation", mdp.name()),
        gamma: mdp.gamma(),
        states: (0..n).map(|s| mdp.state_label(s).to_string()).collect(),
        actions: Vec::with_capacity(n),
        transitions: Vec::with_capacity(n),
        rewards: Vec::with_capacity(n),
        mu: None,
    };
    for s in 0..n {
        let allowed = pi.set(s);
        raw.actions.push(allowed.iter().map(|&a| mdp.action_label(s, a).to_string()).collect());
        raw.transitions.push(allowed.iter().map(|&a| mdp.transitions(s, a).to_vec()).collect());
        raw.rewards.push(allowed.iter().map(|&a| -mdp.reward(s, a)).collect());
    }
    let restricted = Mdp::try_from(raw).expect("restriction of a valid MDP is valid");
    let solved = solve_optimal(&restricted, tol).expect("tolerance is valid");
    let v: Vec<f64> = solved.value.as_slice().iter().map(|x| -x).collect();
    let q = q_table(mdp, &v);
    (v, q)
}

pub fn threshold(mode: EpsMode, vstar: f64) -> f64 {
    match mode.kind {
        EpsKind::Multiplicative => (1.0 - mode.epsilon) * vstar,
        EpsKind::Additive => vstar - mode.epsilon,
    }
}

pub fn admits(mode: EpsMode, v: &[f64], vstar: &[f64]) -> bool {
    v.iter().zip(vstar).all(|(&v, &vs)| v >= threshold(mode, vs) - SLACK)
}

/// Conservative policy by testing each pair's inequality directly.
pub fn conservative_by_pairs(mdp: &Mdp, mode: EpsMode, vstar: &[f64]) -> Vec<Vec<usize>> {
    let (scale, shift) = match mode.kind {
        EpsKind::Multiplicative => (1.0 - mode.epsilon, 0.0),
        EpsKind::Additive => (1.0, -mode.epsilon),
    };
    let shifted: Vec<f64> = vstar.iter().map(|v| scale * v + shift).collect();
    (0..mdp.n_states())
        .map(|s| {
            (0..mdp.n_actions(s))
                .filter(|&a| lookahead(mdp, s, a, &shifted) >= threshold(mode, vstar[s]) - SLACK)
                .collect()
        })
        .collect()
}

/// Whether any state reaches itself through positive-probability edges.
pub fn has_cycle(mdp: &Mdp) -> bool {
    let n = mdp.n_states();
    let mut reach = vec![vec![false; n]; n];
    for (s, a) in mdp.pairs() {
        for &(t, p) in mdp.transitions(s, a) {
            if p > 0.0 {
                reach[s][t] = true;
            }
        }
    }
    #[allow(clippy::needless_range_loop)]
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    (0..n).any(|s| reach[s][s])
}

/// Minimum over states and over (included, excluded) action pairs of
/// `Q(s, in) - Q(s, out)`.
pub fn margin_scan(pi: &NondetPolicy, q: &[Vec<f64>]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for (s, row) in q.iter().enumerate() {
        for (a, &qa) in row.iter().enumerate() {
            for (b, &qb) in row.iter().enumerate() {
                if pi.contains(s, a) && !pi.contains(s, b) {
                    let gap = qa - qb;
                    best = Some(best.map_or(gap, |m: f64| m.min(gap)));
                }
            }
        }
    }
    best
}

/// Worst-case values of every non-empty-set policy of a small MDP.
///
/// Policies are indexed in mixed radix: state `s` contributes digit
/// `mask_s - 1` where `mask_s` is the bitmask of its allowed actions.
/// Singleton policies are solved exactly; any other policy takes the
/// pointwise minimum of two strictly smaller-index policies obtained by
/// splitting one state's set, which equals the minimum over all
/// deterministic selections.
pub struct SubsetOracle {
    radix: Vec<usize>,
    stride: Vec<usize>,
    values: Vec<Vec<f64>>,
    pub vstar: Vec<f64>,
}

impl SubsetOracle {
    pub const MAX_POLICIES: usize = 2_000_000;

    pub fn new(mdp: &Mdp) -> Self {
        let n = mdp.n_states();
        let radix: Vec<usize> = (0..n).map(|s| (1usize << mdp.n_actions(s)) - 1).collect();
        let mut stride = vec![1usize; n];
        for s in 1..n {
            stride[s] = stride[s - 1] * radix[s - 1];
        }
        let total = stride[n - 1] * radix[n - 1];
        assert!(total <= Self::MAX_POLICIES, "{total} policies is too many to enumerate");
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(total);
        for idx in 0..total {
            let masks: Vec<usize> = (0..n).map(|s| idx / stride[s] % radix[s] + 1).collect();
            let split = (0..n).find(|&s| masks[s].count_ones() > 1);
            let v = match split {
                None => {
                    let actions: Vec<usize> = masks.iter().map(|m| m.trailing_zeros() as usize).collect();
                    policy_value_linear(mdp, &actions)
                }
                Some(s) => {
                    let low = masks[s] & masks[s].wrapping_neg();
                    let base = idx - (masks[s] - 1) * stride[s];
                    let single = &values[base + (low - 1) * stride[s]];
                    let rest = &values[base + (masks[s] - low - 1) * stride[s]];
                    single.iter().zip(rest).map(|(a, b)| a.min(*b)).collect()
                }
            };
            values.push(v);
        }
        let vstar = (0..n).map(|s| values.iter().map(|v| v[s]).fold(f64::NEG_INFINITY, f64::max)).collect();
        SubsetOracle { radix, stride, values, vstar }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sets(&self, idx: usize) -> Vec<Vec<usize>> {
        (0..self.radix.len())
            .map(|s| {
                let mask = idx / self.stride[s] % self.radix[s] + 1;
                (0..usize::BITS as usize).filter(|&a| mask >> a & 1 == 1).collect()
            })
            .collect()
    }

    pub fn index_of(&self, pi: &NondetPolicy) -> usize {
        pi.sets()
            .iter()
            .enumerate()
            .map(|(s, set)| (set.iter().map(|&a| 1usize << a).sum::<usize>() - 1) * self.stride[s])
            .sum()
    }

    pub fn value(&self, idx: usize) -> &[f64] {
        &self.values[idx]
    }

    pub fn size(&self, idx: usize) -> usize {
        self.sets(idx).iter().map(Vec::len).sum()
    }

    pub fn feasible(&self, idx: usize, mode: EpsMode) -> bool {
        admits(mode, &self.values[idx], &self.vstar)
    }

    pub fn feasible_indices(&self, mode: EpsMode) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.feasible(i, mode)).collect()
    }

    pub fn max_size(&self, mode: EpsMode) -> usize {
        self.feasible_indices(mode).into_iter().map(|i| self.size(i)).max().expect("optimal policy is feasible")
    }

    /// Feasible policies none of whose single augmentations is feasible.
    pub fn nonaugmentable(&self, mode: EpsMode) -> Vec<Vec<Vec<usize>>> {
        let mut out = Vec::new();
        for idx in self.feasible_indices(mode) {
            let sets = self.sets(idx);
            let mut augmentable = false;
            for s in 0..sets.len() {
                let mask = idx / self.stride[s] % self.radix[s] + 1;
                for a in 0..self.radix[s].count_ones() as usize {
                    if mask >> a & 1 == 0 {
                        let bigger = idx + (1 << a) * self.stride[s];
                        augmentable |= self.feasible(bigger, mode);
                    }
                }
            }
            if !augmentable {
                out.push(sets);
            }
        }
        out.sort();
        out
    }

    /// Largest feasible policy, size ties broken by the largest `mu^T V`.
    pub fn best_weighted(&self, mode: EpsMode, mu: &[f64]) -> (Vec<Vec<usize>>, f64) {
        let mut best: Option<(usize, f64, usize)> = None;
        for idx in self.feasible_indices(mode) {
            let size = self.size(idx);
            let w: f64 = mu.iter().zip(&self.values[idx]).map(|(m, v)| m * v).sum();
            if best.is_none_or(|(bs, bw, _)| size > bs || (size == bs && w > bw)) {
                best = Some((size, w, idx));
            }
        }
        let (_, w, idx) = best.expect("optimal policy is feasible");
        (self.sets(idx), w)
    }
}
