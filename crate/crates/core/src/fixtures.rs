//! Small hand-built MDPs with known answers.

use crate::mdp::{Mdp, RawMdp};

/// Two states. In `s0`, action `a` earns 1 and `b` earns 0.95, both moving
/// to `s1`; `s1` is absorbing with a single zero-reward action. Gamma 0.9.
///
/// V*(s0) = 1 and the worst case of `{a, b}` at `s0` is 0.95.
pub fn two_state_ab() -> Mdp {
    let raw = RawMdp {
        name: "two-state-ab".into(),
        gamma: 0.9,
        states: vec!["s0".into(), "s1".into()],
        actions: vec![vec!["a".into(), "b".into()], vec!["stay".into()]],
        transitions: vec![vec![vec![(1, 1.0)], vec![(1, 1.0)]], vec![vec![(1, 1.0)]]],
        rewards: vec![vec![1.0, 0.95], vec![0.0]],
        mu: None,
    };
    Mdp::try_from(raw).expect("fixture is valid")
}

/// Three-step chain `s0 -> s1 -> s2 -> end` where a second action can be
/// added at `s0` or at `s1`, but not at both. Gamma 0.9, intended for
/// multiplicative epsilon 0.05.
///
/// - `s0`: `a` earns 1, `b` earns 0.9
/// - `s1`: `c` earns 1, `d` earns 0.92
/// - `s2`: a single action earning 1 that ends the episode
///
/// The non-augmentable 0.05-optimal policies are `{a}{c,d}{e}` and
/// `{a,b}{c}{e}`; their union violates the bound at `s0`.
pub fn exclusive_options() -> Mdp {
    let raw = RawMdp {
        name: "exclusive-options".into(),
        gamma: 0.9,
        states: vec!["s0".into(), "s1".into(), "s2".into()],
        actions: vec![
            vec!["a".into(), "b".into()],
            vec!["c".into(), "d".into()],
            vec!["e".into()],
        ],
        transitions: vec![
            vec![vec![(1, 1.0)], vec![(1, 1.0)]],
            vec![vec![(2, 1.0)], vec![(2, 1.0)]],
            vec![vec![]],
        ],
        rewards: vec![vec![1.0, 0.9], vec![1.0, 0.92], vec![1.0]],
        mu: None,
    };
    Mdp::try_from(raw).expect("fixture is valid")
}
