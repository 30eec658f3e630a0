use ndp_core::exact::{solve_exact_with, ExactConfig, MipModel};
use ndp_core::gen::{gen_layered_dag, gen_random51, GenSpec};
use ndp_core::mdp::{find_cycle, Mdp, RawMdp};
use ndp_core::policy::slack;
use ndp_core::*;
use ndp_testkit as tk;
use rand::Rng;

const TOL: f64 = 1e-9;

fn mult(eps: f64) -> EpsMode {
    EpsMode::multiplicative(eps).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn optimal_values_match_linear_solve() {
    for seed in 0..30 {
        let mut rng = tk::rng(seed);
        let mdp = tk::random_mdp(&mut rng, 3, 3, 3);
        let sol = solve_optimal(&mdp, TOL).unwrap();
        let brute = tk::brute_vstar(&mdp);
        assert!(close(sol.value.as_slice(), &brute, 1e-7), "seed {seed}");
        let greedy_value = tk::policy_value_linear(&mdp, sol.policy.actions());
        assert!(close(&greedy_value, &brute, 1e-7), "greedy policy is optimal, seed {seed}");
    }
}

#[test]
fn deterministic_evaluation_matches_linear_solve() {
    for seed in 0..30 {
        let mut rng = tk::rng(100 + seed);
        let mdp = tk::random_mdp(&mut rng, 3, 2, 3);
        let actions: Vec<usize> = (0..3).map(|_| rng.random_range(0..2)).collect();
        let pi = DeterministicPolicy::new(&mdp, actions.clone()).unwrap();
        let v = evaluate_deterministic(&mdp, &pi, TOL).unwrap();
        assert!(close(v.as_slice(), &tk::policy_value_linear(&mdp, &actions), 1e-7));
    }
}

#[test]
fn worst_case_matches_negated_evaluation_mdp() {
    for seed in 0..40 {
        let mut rng = tk::rng(200 + seed);
        let mdp = tk::random_mdp(&mut rng, 4, 3, 3);
        let pi = tk::random_policy(&mut rng, &mdp);
        let eval = evaluate_worst_case(&mdp, &pi, TOL).unwrap();
        let (v, q) = tk::worst_case_by_negation(&mdp, &pi, TOL);
        assert!(close(eval.v.as_slice(), &v, 1e-6), "seed {seed}");
        for (s, row) in q.iter().enumerate() {
            assert!(close(eval.q.row(s), row, 1e-6), "seed {seed} state {s}");
        }
    }
}

#[test]
fn worst_case_matches_minimum_over_deterministic_selections() {
    for seed in 0..5 {
        let mut rng = tk::rng(300 + seed);
        let mdp = tk::random_mdp(&mut rng, 3, 3, 2);
        let oracle = tk::SubsetOracle::new(&mdp);
        assert!(close(&oracle.vstar, solve_optimal(&mdp, TOL).unwrap().value.as_slice(), 1e-7));
        for idx in (0..oracle.len()).step_by(7) {
            let pi = NondetPolicy::new(&mdp, oracle.sets(idx)).unwrap();
            assert_eq!(oracle.index_of(&pi), idx);
            let eval = evaluate_worst_case(&mdp, &pi, TOL).unwrap();
            assert!(close(eval.v.as_slice(), oracle.value(idx), 1e-7), "seed {seed} policy {idx}");
        }
    }
}

#[test]
fn conservative_matches_per_pair_test() {
    for seed in 0..20 {
        let mdp = gen_random51(&GenSpec::random51(5, 4, seed)).unwrap();
        let vstar = solve_optimal(&mdp, TOL).unwrap().value;
        for mode in [mult(0.02), EpsMode::additive(0.05).unwrap()] {
            let pi = conservative_policy(&mdp, mode, &vstar, TOL).unwrap();
            assert_eq!(pi.sets(), tk::conservative_by_pairs(&mdp, mode, vstar.as_slice()), "seed {seed}");
        }
    }
}

#[test]
fn margin_matches_direct_scan() {
    for seed in 0..20 {
        let mut rng = tk::rng(400 + seed);
        let mdp = tk::random_mdp(&mut rng, 4, 3, 2);
        let sol = solve_optimal(&mdp, TOL).unwrap();
        let pi = conservative_policy(&mdp, mult(0.1), &sol.value, TOL).unwrap();
        let q = tk::q_table(&mdp, sol.value.as_slice());
        match (margin(&mdp, &pi, &sol.q).unwrap(), tk::margin_scan(&pi, &q)) {
            (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9, "seed {seed}"),
            (None, None) => {}
            other => panic!("seed {seed}: {other:?}"),
        }
    }
}

fn forward_mdp(rng: &mut rand_chacha::ChaCha8Rng, n: usize, back_edge: bool) -> Mdp {
    let mut transitions = Vec::new();
    for s in 0..n {
        let mut rows = Vec::new();
        for _ in 0..2 {
            rows.push(if s + 1 == n { vec![] } else { vec![(rng.random_range(s + 1..n), 1.0)] });
        }
        transitions.push(rows);
    }
    if back_edge {
        let from = rng.random_range(1..n);
        let to = rng.random_range(0..=from);
        transitions[from][0] = vec![(to, 1.0)];
    }
    let rewards = vec![vec![0.5, 0.25]; n];
    Mdp::try_from(RawMdp::unlabeled("forward", 0.9, transitions, rewards)).unwrap()
}

#[test]
fn dag_detection_matches_reachability() {
    for seed in 0..60 {
        let mut rng = tk::rng(500 + seed);
        let mdp = forward_mdp(&mut rng, 6, seed % 2 == 1);
        let cyclic = tk::has_cycle(&mdp);
        assert_eq!(is_dag(&mdp).is_none(), cyclic, "seed {seed}");
        assert_eq!(find_cycle(&mdp).is_some(), cyclic, "seed {seed}");
        if let Some(order) = is_dag(&mdp) {
            let mut pos = vec![0; mdp.n_states()];
            for (i, &s) in order.iter().enumerate() {
                pos[s] = i;
            }
            for (s, a) in mdp.pairs() {
                for &(t, _) in mdp.transitions(s, a) {
                    assert!(pos[s] < pos[t]);
                }
            }
        }
        let random = tk::random_mdp(&mut rng, 4, 2, 2);
        assert_eq!(is_dag(&random).is_none(), tk::has_cycle(&random));
    }
}

#[test]
fn search_full_reaches_oracle_maximum() {
    for seed in 0..15 {
        let mut rng = tk::rng(600 + seed);
        let mdp = tk::random_mdp(&mut rng, 3, 3, 3);
        let oracle = tk::SubsetOracle::new(&mdp);
        for eps in [0.0, 0.05, 0.2] {
            let report = search_full(&mdp, &SearchConfig::new(mult(eps))).unwrap();
            assert_eq!(report.policy.size(), oracle.max_size(mult(eps)), "seed {seed} eps {eps}");
            assert!(oracle.feasible(oracle.index_of(&report.policy), mult(eps)));
        }
    }
}

#[test]
fn enumeration_matches_oracle() {
    for seed in 0..15 {
        let mut rng = tk::rng(700 + seed);
        let mdp = tk::random_mdp(&mut rng, 3, 3, 3);
        let oracle = tk::SubsetOracle::new(&mdp);
        for eps in [0.02, 0.1] {
            let found: Vec<Vec<Vec<usize>>> = enumerate_nonaugmentable(&mdp, &SearchConfig::new(mult(eps)))
                .unwrap()
                .into_iter()
                .map(|p| p.sets().to_vec())
                .collect();
            assert_eq!(found, oracle.nonaugmentable(mult(eps)), "seed {seed} eps {eps}");
        }
    }
}

#[test]
fn exclusive_fixture_matches_oracle() {
    let mdp = fixtures::exclusive_options();
    let oracle = tk::SubsetOracle::new(&mdp);
    let listed = enumerate_nonaugmentable(&mdp, &SearchConfig::new(mult(0.05))).unwrap();
    let expected = oracle.nonaugmentable(mult(0.05));
    assert_eq!(expected.len(), 2);
    assert_eq!(listed.iter().map(|p| p.sets().to_vec()).collect::<Vec<_>>(), expected);
    let union: Vec<Vec<usize>> = (0..3)
        .map(|s| {
            let mut set: Vec<usize> = listed.iter().flat_map(|p| p.set(s).to_vec()).collect();
            set.sort();
            set.dedup();
            set
        })
        .collect();
    let union = NondetPolicy::new(&mdp, union).unwrap();
    let vstar = solve_optimal(&mdp, TOL).unwrap().value;
    assert!(!is_eps_optimal(&mdp, &union, mult(0.05), &vstar, TOL).unwrap());
}

#[test]
fn exact_matches_oracle_on_random51() {
    for seed in 0..4 {
        let mdp = gen_random51(&GenSpec::random51(5, 4, seed)).unwrap();
        let oracle = tk::SubsetOracle::new(&mdp);
        for eps in [0.0, 0.01, 0.02, 0.03] {
            let result = solve_exact(&mdp, mult(eps), None, None).unwrap();
            assert!(result.proven_optimal);
            let (sets, weighted) = oracle.best_weighted(mult(eps), mdp.mu());
            assert_eq!(result.policy.size(), oracle.max_size(mult(eps)), "seed {seed} eps {eps}");
            assert_eq!(result.policy.sets(), &sets[..], "seed {seed} eps {eps}");
            let model = MipModel::new(&mdp, mult(eps), None, TOL).unwrap();
            assert!((model.weighted_value(result.v.as_slice()) - weighted).abs() < 1e-7);
            assert!(model.satisfies(&mdp, &result.policy, result.v.as_slice(), TOL));
        }
    }
}

#[test]
fn exact_respects_mu_against_oracle() {
    for seed in 0..10 {
        let mut rng = tk::rng(800 + seed);
        let mdp = tk::random_mdp(&mut rng, 3, 3, 2);
        let oracle = tk::SubsetOracle::new(&mdp);
        let raw: Vec<f64> = (0..3).map(|_| rng.random::<f64>() + 0.01).collect();
        let total: f64 = raw.iter().sum();
        let mut mu: Vec<f64> = raw.iter().map(|w| w / total).collect();
        mu[2] = 1.0 - mu[0] - mu[1];
        for eps in [0.05, 0.15] {
            let result = solve_exact(&mdp, mult(eps), Some(mu.clone()), None).unwrap();
            let (sets, _) = oracle.best_weighted(mult(eps), &mu);
            assert_eq!(result.policy.sets(), &sets[..], "seed {seed} eps {eps}");
        }
    }
}

#[test]
fn fathomed_nodes_have_no_feasible_completion() {
    for seed in 0..10 {
        let mut rng = tk::rng(900 + seed);
        let mdp = tk::random_mdp(&mut rng, 3, 3, 3);
        let oracle = tk::SubsetOracle::new(&mdp);
        for eps in [0.05, 0.2] {
            let mut cfg = ExactConfig::new(mult(eps));
            cfg.record_fathomed = true;
            let result = solve_exact_with(&mdp, &cfg).unwrap();
            for record in &result.fathom_log {
                for idx in oracle.feasible_indices(mult(eps)) {
                    let sets = oracle.sets(idx);
                    let completes = (0..3).all(|s| {
                        record.included[s].iter().all(|a| sets[s].contains(a))
                            && record.excluded[s].iter().all(|a| !sets[s].contains(a))
                    });
                    assert!(!completes, "seed {seed} eps {eps}: fathomed node has feasible completion {sets:?}");
                }
                if record.included.iter().all(|set| !set.is_empty()) {
                    let mandatory = NondetPolicy::new(&mdp, record.included.clone()).unwrap();
                    assert!(!oracle.feasible(oracle.index_of(&mandatory), mult(eps)));
                }
            }
        }
    }
}

#[test]
fn dag_search_agrees_with_full_search() {
    for seed in 0..10 {
        let mdp = gen_layered_dag(&GenSpec::layered_dag(3, 3, 3, seed)).unwrap();
        for eps in [0.01, 0.02, 0.05] {
            let cfg = SearchConfig::new(mult(eps));
            let full = search_full(&mdp, &cfg).unwrap();
            let dag = search_dag(&mdp, &cfg).unwrap();
            assert_eq!(full.objective_value, dag.objective_value, "seed {seed} eps {eps}");
        }
    }
    let single_layer = gen_layered_dag(&GenSpec::layered_dag(1, 4, 3, 3)).unwrap();
    let cfg = SearchConfig::new(mult(0.3));
    assert_eq!(search_full(&single_layer, &cfg).unwrap().policy, search_dag(&single_layer, &cfg).unwrap().policy);
}

#[test]
fn additive_mode_reaches_oracle_maximum() {
    for seed in 0..10 {
        let mut rng = tk::rng(1000 + seed);
        let mdp = tk::random_mdp(&mut rng, 3, 3, 3);
        let oracle = tk::SubsetOracle::new(&mdp);
        let mode = EpsMode::additive(0.1).unwrap();
        assert_eq!(search_full(&mdp, &SearchConfig::new(mode)).unwrap().policy.size(), oracle.max_size(mode));
        assert_eq!(solve_exact(&mdp, mode, None, None).unwrap().policy.size(), oracle.max_size(mode));
        let vstar = solve_optimal(&mdp, TOL).unwrap().value;
        let cons = conservative_policy(&mdp, mode, &vstar, TOL).unwrap();
        let v = evaluate_worst_case(&mdp, &cons, TOL).unwrap().v;
        assert!(tk::admits(mode, v.as_slice(), &oracle.vstar), "seed {seed}");
        assert!(slack(TOL) <= tk::SLACK);
    }
}

#[test]
fn nonaugmentable_policy_can_omit_a_conservative_pair() {
    let mut rng = tk::rng(702);
    let mdp = tk::random_mdp(&mut rng, 3, 3, 3);
    let mode = mult(0.1);
    let vstar = solve_optimal(&mdp, TOL).unwrap().value;
    let conservative = conservative_policy(&mdp, mode, &vstar, TOL).unwrap();
    assert_eq!(conservative.sets(), &[vec![0], vec![0, 2], vec![0, 1]]);
    let pi = NondetPolicy::new(&mdp, vec![vec![0], vec![0, 1, 2], vec![0]]).unwrap();
    assert!(is_non_augmentable(&mdp, &pi, mode, &vstar, TOL).unwrap());
    assert!(!pi.includes(&conservative).unwrap());
    let oracle = tk::SubsetOracle::new(&mdp);
    let with_pair = pi.augment(&mdp, 2, 1).unwrap();
    assert!(!oracle.feasible(oracle.index_of(&with_pair), mode));
    let listed = enumerate_nonaugmentable(&mdp, &SearchConfig::new(mode)).unwrap();
    assert!(listed.contains(&pi));
    assert!(listed.contains(&conservative));
}

#[test]
fn unique_maximum_policy_can_exclude_the_conservative_policy() {
    let mdp = gen_random51(&GenSpec::random51(5, 4, 2)).unwrap();
    let mode = mult(0.1);
    let vstar = solve_optimal(&mdp, TOL).unwrap().value;
    let conservative = conservative_policy(&mdp, mode, &vstar, TOL).unwrap();
    let oracle = tk::SubsetOracle::new(&mdp);
    let best = oracle.max_size(mode);
    let maxima: Vec<usize> = oracle.feasible_indices(mode).into_iter().filter(|&i| oracle.size(i) == best).collect();
    assert_eq!(maxima.len(), 1);
    let unique = NondetPolicy::new(&mdp, oracle.sets(maxima[0])).unwrap();
    assert!(!unique.includes(&conservative).unwrap());
    let result = solve_exact(&mdp, mode, None, None).unwrap();
    assert_eq!(result.policy, unique);
}
