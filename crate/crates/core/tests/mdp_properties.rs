mod common;

use approx::assert_abs_diff_eq;
use common::*;
use proptest::prelude::*;
use vopr::harness::{counterexample, random_mdp};
use vopr::mdp::{
    bellman_optimality, expected_return, greedy_policy, performance_difference, policy_q_values,
    solve_optimal, validate_mdp, value_iteration,
};
use vopr::{Error, NonStationaryPolicy, Policy, SaTable, TabularMDP};

const L: usize = 0;
const R: usize = 1;

#[test]
fn smallest_mdp_and_rejections() {
    let one = TabularMDP::new(1, 1, vec![1.0], vec![1.0], 0.9, 1.0, vec![1.0]).unwrap();
    assert_eq!(validate_mdp(one.clone()).unwrap(), one);

    let short = TabularMDP::new(
        2,
        1,
        vec![0.9, 0.0, 0.0, 1.0],
        vec![0.0, 0.0],
        0.9,
        1.0,
        vec![1.0, 0.0],
    );
    match short {
        Err(Error::InvalidTransition { state, action, .. }) => assert_eq!((state, action), (0, 0)),
        other => panic!("expected a transition error, got {other:?}"),
    }
    let neg = TabularMDP::new(1, 1, vec![1.0], vec![-0.1], 0.9, 1.0, vec![1.0]).unwrap_err();
    assert!(matches!(neg, Error::RewardOutOfRange { .. }));
    assert!(neg.to_string().contains("reward out of [0, R_max]"));
}

#[test]
fn single_state_values() {
    let m = TabularMDP::new(1, 1, vec![1.0], vec![1.0], 0.9, 1.0, vec![1.0]).unwrap();
    let q = value_iteration(&m, 1e-9).unwrap();
    assert_abs_diff_eq!(q.get(0, 0), 10.0, epsilon = 1e-9);
    let zero = random_mdp(3, 2, 0.8, 4, 1.0).unwrap();
    assert!(value_iteration(&zero, 1e-9)
        .unwrap()
        .values()
        .iter()
        .all(|x| *x == 0.0));
    let any = Policy::uniform(3, 2);
    assert!(policy_q_values(&zero, &any)
        .unwrap()
        .values()
        .iter()
        .all(|x| *x == 0.0));
}

#[test]
fn two_route_chain_values() {
    let m = counterexample(0.9).unwrap();
    let opt = solve_optimal(&m).unwrap();
    let q = &opt.q_star;
    assert_abs_diff_eq!(q.get(0, L), 9.0, epsilon = 1e-9);
    assert_abs_diff_eq!(q.get(0, R), 9.0, epsilon = 1e-9);
    assert_abs_diff_eq!(q.get(2, L), 10.0, epsilon = 1e-9);
    assert_abs_diff_eq!(q.get(2, R), 8.1, epsilon = 1e-9);
    assert_abs_diff_eq!(q.get(3, L), 100.0 / 9.0, epsilon = 1e-9);
    assert_abs_diff_eq!(q.get(3, R), 100.0 / 9.0, epsilon = 1e-9);

    // greedy picks L at the tie
    assert_eq!(opt.pi_star.as_deterministic().unwrap(), vec![L, L, L, L]);
    assert_abs_diff_eq!(opt.j_star, 9.0, epsilon = 1e-9);

    let right = Policy::deterministic(&[R, L, L, L], 2).unwrap();
    assert_abs_diff_eq!(expected_return(&m, &right).unwrap(), 9.0, epsilon = 1e-9);

    let cycle = Policy::deterministic(&[L, L, R, L], 2).unwrap();
    assert_abs_diff_eq!(
        policy_q_values(&m, &cycle).unwrap().get(0, L),
        0.0,
        epsilon = 1e-12
    );
    assert_abs_diff_eq!(expected_return(&m, &cycle).unwrap(), 0.0, epsilon = 1e-12);

    let (lhs, rhs) = performance_difference(&m, &opt.pi_star, &cycle).unwrap();
    assert_abs_diff_eq!(lhs, 0.9, epsilon = 1e-9);
    assert_abs_diff_eq!(rhs, 0.9, epsilon = 1e-9);
}

#[test]
fn greedy_tie_rules() {
    let q = SaTable::constant(3, 4, 2.5);
    assert_eq!(greedy_policy(&q).as_deterministic().unwrap(), vec![0, 0, 0]);
    let q = SaTable::from_vec(2, 3, vec![0.0, 1.0, 0.5, 3.0, 2.0, 1.0]).unwrap();
    let g = greedy_policy(&q);
    assert_eq!(g.as_deterministic().unwrap(), vec![1, 0]);
    assert_eq!(g.prob(0, 1), 1.0);
}

#[test]
fn non_stationary_with_equal_parts_is_stationary() {
    let m = random_mdp(4, 3, 0.85, 11, 0.2).unwrap();
    let pi = policy_from_raw(
        4,
        3,
        &[0.2, 0.5, 0.3, 0.1, 0.1, 0.8, 0.6, 0.2, 0.2, 0.3, 0.3, 0.4],
    );
    let ns = NonStationaryPolicy::new(vec![pi.clone(); 3], pi.clone()).unwrap();
    assert_abs_diff_eq!(
        expected_return(&m, &ns).unwrap(),
        expected_return(&m, &pi).unwrap(),
        epsilon = 1e-9
    );
}

#[test]
fn file_round_trip_is_bit_stable() {
    let m = random_mdp(4, 2, 0.93, 5, 0.3).unwrap();
    let text = m.to_toml().unwrap();
    let back = TabularMDP::from_toml(&text).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.to_toml().unwrap(), text);
    let dir = tempfile::tempdir().unwrap();
    m.save(dir.path().join("m.toml")).unwrap();
    assert_eq!(TabularMDP::load(dir.path().join("m.toml")).unwrap(), m);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn bellman_operator_contracts(c in case(5, 3, 0.99), shift in -3.0..3.0f64) {
        let (ns, na) = (c.mdp.n_states(), c.mdp.n_actions());
        let q1 = SaTable::from_vec(ns, na, c.x.iter().map(|v| v * 5.0).collect()).unwrap();
        let q2 = SaTable::from_vec(ns, na, c.y.iter().map(|v| v * 5.0 + shift).collect()).unwrap();
        let lhs = bellman_optimality(&c.mdp, &q1).max_abs_diff(&bellman_optimality(&c.mdp, &q2));
        prop_assert!(lhs <= c.mdp.gamma() * q1.max_abs_diff(&q2) + 1e-12);
    }

    #[test]
    fn policy_evaluation_matches_oracle(c in case(5, 3, 0.95)) {
        let q = policy_q_values(&c.mdp, &c.pi).unwrap();
        let oracle = oracle_q(&c.mdp, &c.pi);
        for (a, b) in q.values().iter().zip(&oracle) {
            prop_assert!((a - b).abs() <= 1e-9 * c.mdp.v_max().max(1.0));
        }
    }

    #[test]
    fn value_iteration_meets_its_tolerance(c in case(4, 3, 0.95), tol_exp in 2..8i32) {
        let tol = 10f64.powi(-tol_exp);
        let q = value_iteration(&c.mdp, tol).unwrap();
        let g = c.mdp.gamma();
        prop_assert!(q.max_abs_diff(&bellman_optimality(&c.mdp, &q)) <= tol * (1.0 - g) / (2.0 * g) + 1e-12);
        // Q* as the pointwise max over all deterministic policies
        let (ns, na) = (c.mdp.n_states(), c.mdp.n_actions());
        let mut star = vec![f64::NEG_INFINITY; ns * na];
        for pi in all_deterministic(ns, na) {
            for (m, v) in star.iter_mut().zip(oracle_q(&c.mdp, &pi)) {
                *m = m.max(v);
            }
        }
        let err = q.values().iter().zip(&star).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err <= tol + 1e-9);
        let opt = solve_optimal(&c.mdp).unwrap();
        let err = opt.q_star.values().iter().zip(&star).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-9 * c.mdp.v_max().max(1.0));
    }

    #[test]
    fn greedy_optimal_policy_beats_every_deterministic_policy(c in case(4, 3, 0.95)) {
        let opt = solve_optimal(&c.mdp).unwrap();
        let best = all_deterministic(c.mdp.n_states(), c.mdp.n_actions())
            .iter()
            .map(|pi| oracle_return(&c.mdp, std::slice::from_ref(pi)))
            .fold(f64::NEG_INFINITY, f64::max);
        let j = expected_return(&c.mdp, &greedy_policy(&opt.q_star)).unwrap();
        prop_assert!((j - best).abs() <= 1e-9 * c.mdp.v_max().max(1.0));
    }

    #[test]
    fn performance_difference_identity(c in case(5, 3, 0.95)) {
        let (lhs, rhs) = performance_difference(&c.mdp, &c.pi, &c.pi2).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-8);
        let (same_l, same_r) = performance_difference(&c.mdp, &c.pi, &c.pi).unwrap();
        prop_assert!(same_l.abs() <= 1e-12 && same_r.abs() <= 1e-12);
        let oracle = (1.0 - c.mdp.gamma()) * (oracle_return(&c.mdp, std::slice::from_ref(&c.pi)) - oracle_return(&c.mdp, std::slice::from_ref(&c.pi2)));
        prop_assert!((lhs - oracle).abs() <= 1e-8);
    }
}
