mod common;

use approx::assert_abs_diff_eq;
use common::*;
use proptest::prelude::*;
use vopr::dataset::data_distribution;
use vopr::function_classes::{
    build_realizable_classes, optimal_beta, optimal_w, ClassKind, DistractorSpec,
    FiniteFunctionClass,
};
use vopr::harness::random_mdp;
use vopr::mdp::solve_optimal;
use vopr::{Error, Policy, SaDistribution, SaTable, StateDistribution, TabularMDP};

#[test]
fn single_state_ratio() {
    let m = TabularMDP::new(1, 1, vec![1.0], vec![1.0], 0.9, 1.0, vec![1.0]).unwrap();
    let d = SaDistribution::new(1, 1, vec![1.0]).unwrap();
    let w = optimal_w(&m, &d, &d).unwrap();
    assert_abs_diff_eq!(w.get(0, 0), 100.0, epsilon = 1e-9);
}

#[test]
fn zero_reward_ratio_uses_the_convention() {
    let m = random_mdp(3, 2, 0.9, 3, 1.0).unwrap();
    let d_c = SaDistribution::uniform(3, 2);
    let d_data = SaDistribution::new(3, 2, vec![0.25, 0.25, 0.25, 0.25, 0.0, 0.0]).unwrap();
    let w = optimal_w(&m, &d_c, &d_data).unwrap();
    assert_eq!(w.values(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
}

#[test]
fn missing_data_support_is_unrealizable() {
    let m = random_mdp(3, 2, 0.9, 3, 0.0).unwrap();
    let d_c = SaDistribution::uniform(3, 2);
    let d_data = SaDistribution::new(3, 2, vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.0]).unwrap();
    assert!(matches!(
        optimal_w(&m, &d_c, &d_data),
        Err(Error::Unrealizable { .. })
    ));
}

#[test]
fn policy_ratio_examples() {
    let star = Policy::deterministic(&[1, 0, 1], 2).unwrap();
    let same = optimal_beta(&star, &star).unwrap();
    for s in 0..3 {
        for a in 0..2 {
            if star.prob(s, a) > 0.0 {
                assert_eq!(same.get(s, a), 1.0);
            }
        }
    }
    let uniform = optimal_beta(&star, &Policy::uniform(3, 2)).unwrap();
    assert!(uniform.values().iter().all(|b| *b == 0.0 || *b == 2.0));
    let missing = Policy::deterministic(&[0, 0, 0], 2).unwrap();
    assert!(matches!(
        optimal_beta(&star, &missing),
        Err(Error::PolicyUncovered {
            state: 0,
            action: 1
        })
    ));
}

fn setup(seed: u64) -> (TabularMDP, SaDistribution, SaDistribution, Policy) {
    let m = random_mdp(4, 3, 0.9, seed, 0.3).unwrap();
    let pi_b = Policy::uniform(4, 3);
    let d_data = data_distribution(&StateDistribution::uniform(4), &pi_b).unwrap();
    let d_c = SaDistribution::compose(
        &StateDistribution::new(vec![0.4, 0.3, 0.2, 0.1]).unwrap(),
        &pi_b,
    )
    .unwrap();
    (m, d_c, d_data, pi_b)
}

#[test]
fn no_distractors_gives_singletons() {
    let (m, d_c, d_data, pi_c) = setup(1);
    let opt = solve_optimal(&m).unwrap();
    let spec = DistractorSpec {
        count: 0,
        scale: 0.3,
    };
    let c = build_realizable_classes(&m, &opt, &d_c, &d_data, &pi_c, spec, 5).unwrap();
    assert_eq!((c.q.len(), c.w.len(), c.b.len()), (1, 1, 1));
    assert_eq!(c.q_star(), &opt.q_star);
}

#[test]
fn class_bounds_and_membership() {
    let pi_c = Policy::uniform(2, 2);
    let ok = SaTable::from_vec(2, 2, vec![1.5, 0.5, 1.0, 1.0]).unwrap();
    let b = FiniteFunctionClass::policy_ratio_class(vec![ok.clone()], &pi_c).unwrap();
    assert_eq!((b.kind(), b.bound()), (ClassKind::B, 1.5));
    let bad = SaTable::from_vec(2, 2, vec![1.5, 1.5, 1.0, 1.0]).unwrap();
    assert!(FiniteFunctionClass::policy_ratio_class(vec![ok, bad], &pi_c).is_err());
    let over = SaTable::constant(2, 2, 11.0);
    assert!(FiniteFunctionClass::value_class(vec![over], 10.0).is_err());
    assert!(FiniteFunctionClass::weight_class(vec![SaTable::constant(2, 2, -0.1)]).is_err());
    assert!(FiniteFunctionClass::weight_class(vec![]).is_err());
}

#[test]
fn class_files_round_trip() {
    let (m, d_c, d_data, pi_c) = setup(2);
    let opt = solve_optimal(&m).unwrap();
    let spec = DistractorSpec {
        count: 3,
        scale: 0.3,
    };
    let c = build_realizable_classes(&m, &opt, &d_c, &d_data, &pi_c, spec, 8).unwrap();
    for class in [&c.q, &c.w, &c.b] {
        let back = FiniteFunctionClass::from_toml(&class.to_toml().unwrap()).unwrap();
        assert_eq!(&back, class);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn built_classes_are_realizable_and_honest(seed in any::<u64>(), count in 0usize..9, scale in 0.0..1.0f64) {
        let (m, d_c, d_data, pi_c) = setup(seed);
        let opt = solve_optimal(&m).unwrap();
        let spec = DistractorSpec { count, scale };
        let c = build_realizable_classes(&m, &opt, &d_c, &d_data, &pi_c, spec, seed).unwrap();
        let again = build_realizable_classes(&m, &opt, &d_c, &d_data, &pi_c, spec, seed).unwrap();
        prop_assert_eq!(&c.q, &again.q);
        prop_assert_eq!(&c.w, &again.w);
        prop_assert_eq!(&c.b, &again.b);
        prop_assert_eq!((c.q.len(), c.w.len(), c.b.len()), (count + 1, count + 1, count + 1));

        // honest bounds
        let max_of = |k: &FiniteFunctionClass| k.members().iter().map(|t| t.max_value()).fold(0.0, f64::max);
        prop_assert_eq!(c.w.bound(), max_of(&c.w));
        prop_assert_eq!(c.b.bound(), max_of(&c.b));
        prop_assert_eq!(c.q.bound(), m.v_max());
        for t in c.q.members() {
            prop_assert!(t.values().iter().all(|x| *x >= 0.0 && *x <= m.v_max()));
        }
        c.b.check_normalization(&pi_c).unwrap();

        // Q* member
        prop_assert!(c.q_star().max_abs_diff(&opt.q_star) <= 1e-12);
        // w* o d^D = (I - gamma P_{pi*})^{-1}(d_c o Q*), oracle by forward iteration
        let rhs: Vec<f64> = d_c.weights().iter().zip(opt.q_star.values()).map(|(d, q)| d * q).collect();
        let target: Vec<f64> = oracle_occupancy(&m, &opt.pi_star, &rhs).iter().map(|x| x / (1.0 - m.gamma())).collect();
        for (i, t) in target.iter().enumerate() {
            let lhs = c.w_star().values()[i] * d_data.weights()[i];
            prop_assert!((lhs - t).abs() <= 1e-9 * t.abs().max(1.0));
        }
        // beta* o pi_c = pi*_e
        for s in 0..4 {
            for a in 0..3 {
                prop_assert!((c.beta_star().get(s, a) * pi_c.prob(s, a) - opt.pi_star.prob(s, a)).abs() <= 1e-12);
            }
        }
    }
}
