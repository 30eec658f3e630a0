//! Seeded random instance generators.
//!
//! Both generators draw from `ChaCha8Rng` seeded with the 64-bit spec seed.
//! Each generator kind reads its own ChaCha stream (`random51` stream 0,
//! `layered_dag` stream 1), so one seed never produces correlated instances
//! across kinds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NdpError, Result};
use crate::mdp::{Mdp, RawMdp};

pub const RANDOM51_GAMMA: f64 = 0.95;
pub const RANDOM51_BONUS: f64 = 10.0;
pub const DAG_GAMMA: f64 = 0.999;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenKind {
    Random51,
    LayeredDag,
}

impl GenKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GenKind::Random51 => "random51",
            GenKind::LayeredDag => "layered_dag",
        }
    }

    fn stream(self) -> u64 {
        match self {
            GenKind::Random51 => 0,
            GenKind::LayeredDag => 1,
        }
    }
}

/// Generator parameters. `states` is used by `random51`; `layers` and
/// `width` by `layered_dag`; `actions` by both.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GenSpec {
    pub kind: GenKind,
    pub states: usize,
    pub actions: usize,
    pub layers: usize,
    pub width: usize,
    pub seed: u64,
}

impl GenSpec {
    pub fn random51(states: usize, actions: usize, seed: u64) -> Self {
        GenSpec { kind: GenKind::Random51, states, actions, layers: 0, width: 0, seed }
    }

    pub fn layered_dag(layers: usize, width: usize, actions: usize, seed: u64) -> Self {
        GenSpec { kind: GenKind::LayeredDag, states: layers * width + 1, actions, layers, width, seed }
    }

    pub fn instance_name(&self) -> String {
        match self.kind {
            GenKind::Random51 => format!("random51-{}x{}-seed{}", self.states, self.actions, self.seed),
            GenKind::LayeredDag => {
                format!("dag-{}x{}x{}-seed{}", self.layers, self.width, self.actions, self.seed)
            }
        }
    }

    fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.kind.stream());
        rng
    }
}

pub fn generate(spec: &GenSpec) -> Result<Mdp> {
    match spec.kind {
        GenKind::Random51 => gen_random51(spec),
        GenKind::LayeredDag => gen_layered_dag(spec),
    }
}

/// Deterministic transitions to uniformly chosen states, rewards uniform on
/// `[0, 1)`, one uniformly chosen pair earning 10, gamma 0.95.
pub fn gen_random51(spec: &GenSpec) -> Result<Mdp> {
    let (n, m) = (spec.states, spec.actions);
    if n < 2 || m < 1 {
        return Err(NdpError::ShapeMismatch(format!("random51 needs states >= 2 and actions >= 1, got {n}x{m}")));
    }
    let mut rng = spec.rng();
    let mut transitions = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    for _ in 0..n {
        let mut rows = Vec::with_capacity(m);
        let mut rs = Vec::with_capacity(m);
        for _ in 0..m {
            rows.push(vec![(rng.random_range(0..n), 1.0)]);
            rs.push(rng.random::<f64>());
        }
        transitions.push(rows);
        rewards.push(rs);
    }
    let bonus = rng.random_range(0..n * m);
    rewards[bonus / m][bonus % m] = RANDOM51_BONUS;
    let raw = RawMdp::unlabeled(spec.instance_name(), RANDOM51_GAMMA, transitions, rewards);
    Mdp::try_from(raw)
}

/// `layers x width` states in layer-major order followed by one terminal
/// state. Every action of a layer-`l` state moves to layer `l + 1` under a
/// random distribution (the last layer moves to the terminal); the terminal
/// has a single zero-reward action that ends the episode. Rewards uniform on
/// `[0, 1)`, gamma 0.999.
pub fn gen_layered_dag(spec: &GenSpec) -> Result<Mdp> {
    let (layers, width, m) = (spec.layers, spec.width, spec.actions);
    if layers < 1 || width < 1 || m < 1 {
        return Err(NdpError::ShapeMismatch(format!(
            "layered_dag needs layers, width and actions >= 1, got {layers}x{width}x{m}"
        )));
    }
    let terminal = layers * width;
    let mut rng = spec.rng();
    let mut states = Vec::with_capacity(terminal + 1);
    let mut actions = Vec::with_capacity(terminal + 1);
    let mut transitions = Vec::with_capacity(terminal + 1);
    let mut rewards = Vec::with_capacity(terminal + 1);
    for layer in 0..layers {
        for w in 0..width {
            states.push(format!("l{layer}w{w}"));
            actions.push((0..m).map(|a| format!("a{a}")).collect());
            let mut rows = Vec::with_capacity(m);
            let mut rs = Vec::with_capacity(m);
            for _ in 0..m {
                rows.push(if layer + 1 == layers {
                    vec![(terminal, 1.0)]
                } else {
                    next_layer_distribution(&mut rng, (layer + 1) * width, width)
                });
                rs.push(rng.random::<f64>());
            }
            transitions.push(rows);
            rewards.push(rs);
        }
    }
    states.push("end".into());
    actions.push(vec!["stop".into()]);
    transitions.push(vec![vec![]]);
    rewards.push(vec![0.0]);
    let raw = RawMdp {
        name: spec.instance_name(),
        gamma: DAG_GAMMA,
        states,
        actions,
        transitions,
        rewards,
        mu: None,
    };
    Mdp::try_from(raw)
}

/// Normalized weights drawn from `(0, 1]` over `width` consecutive states.
/// The last entry absorbs rounding so the row sums to one.
fn next_layer_distribution(rng: &mut ChaCha8Rng, first: usize, width: usize) -> Vec<(usize, f64)> {
    let weights: Vec<f64> = (0..width).map(|_| 1.0 - rng.random::<f64>()).collect();
    let total: f64 = weights.iter().sum();
    let mut row: Vec<(usize, f64)> = weights.iter().enumerate().map(|(i, w)| (first + i, w / total)).collect();
    let head: f64 = row[..width - 1].iter().map(|&(_, p)| p).sum();
    row[width - 1].1 = 1.0 - head;
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{is_dag, validate};

    #[test]
    fn random51_is_reproducible_and_valid() {
        let spec = GenSpec::random51(5, 4, 7);
        let a = gen_random51(&spec).unwrap();
        let b = gen_random51(&spec).unwrap();
        assert_eq!(a.to_raw(), b.to_raw());
        assert!(validate(&a.to_raw()).is_empty());
        assert_ne!(a.to_raw(), gen_random51(&GenSpec::random51(5, 4, 8)).unwrap().to_raw());
    }

    #[test]
    fn random51_has_one_bonus_pair() {
        for seed in 0..20 {
            let mdp = gen_random51(&GenSpec::random51(5, 4, seed)).unwrap();
            let outside: Vec<f64> = mdp.pairs().map(|(s, a)| mdp.reward(s, a)).filter(|r| !(0.0..=1.0).contains(r)).collect();
            assert_eq!(outside, vec![10.0]);
            assert_eq!(mdp.gamma(), 0.95);
            for (s, a) in mdp.pairs() {
                assert_eq!(mdp.transitions(s, a).len(), 1);
            }
        }
    }

    #[test]
    fn random51_rejects_tiny_specs() {
        assert!(gen_random51(&GenSpec::random51(1, 4, 0)).is_err());
        assert!(gen_random51(&GenSpec::random51(3, 0, 0)).is_err());
    }

    #[test]
    fn layered_dag_shape() {
        let mdp = gen_layered_dag(&GenSpec::layered_dag(4, 4, 3, 11)).unwrap();
        assert_eq!(mdp.n_states(), 17);
        assert_eq!(mdp.gamma(), 0.999);
        assert!(validate(&mdp.to_raw()).is_empty());
        let order = is_dag(&mdp).expect("layered generator output is acyclic");
        let layer = |s: usize| if s == 16 { 4 } else { s / 4 };
        assert!(order.windows(2).all(|w| layer(w[0]) <= layer(w[1])));
        for (s, a) in mdp.pairs() {
            for &(t, p) in mdp.transitions(s, a) {
                assert!(p > 0.0);
                assert_eq!(layer(t), layer(s) + 1);
            }
        }
        assert!(mdp.transitions(16, 0).is_empty());
        assert_eq!(mdp.reward(16, 0), 0.0);
    }

    #[test]
    fn layered_dag_is_reproducible() {
        let spec = GenSpec::layered_dag(3, 2, 2, 5);
        assert_eq!(gen_layered_dag(&spec).unwrap().to_raw(), gen_layered_dag(&spec).unwrap().to_raw());
    }
}
