mod common;

use common::*;
use proptest::prelude::*;
use vopr::dataset::{
    data_distribution, empirical_state_action_dist, sample_dataset, Dataset, DatasetMeta,
    Transition,
};
use vopr::harness::random_mdp;
use vopr::{Error, Policy, StateDistribution, TabularMDP};

#[test]
fn single_state_tuples_are_fixed() {
    let m = TabularMDP::new(1, 1, vec![1.0], vec![0.75], 0.9, 1.0, vec![1.0]).unwrap();
    let ds = sample_dataset(
        &m,
        &StateDistribution::uniform(1),
        &Policy::uniform(1, 1),
        50,
        3,
    )
    .unwrap();
    assert_eq!(ds.len(), 50);
    assert!(ds.tuples.iter().all(|t| *t
        == Transition {
            s: 0,
            a: 0,
            r: 0.75,
            s_next: 0
        }));
}

#[test]
fn large_samples_match_the_data_distribution() {
    let m = random_mdp(4, 3, 0.9, 17, 0.2).unwrap();
    let mu = StateDistribution::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let pi_b = policy_from_raw(
        4,
        3,
        &[1.0, 2.0, 3.0, 1.0, 1.0, 1.0, 5.0, 1.0, 0.5, 0.2, 0.3, 0.5],
    );
    let ds = sample_dataset(&m, &mu, &pi_b, 100_000, 42).unwrap();
    let emp = empirical_state_action_dist(&ds).unwrap();
    let d = data_distribution(&mu, &pi_b).unwrap();
    let tv = 0.5
        * emp
            .weights()
            .iter()
            .zip(d.weights())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();
    assert!(tv <= 0.01, "total variation {tv}");
    ds.check_consistency(&m).unwrap();
}

#[test]
fn empirical_distribution_examples() {
    let meta = DatasetMeta {
        mdp_digest: 0,
        n_states: 2,
        n_actions: 2,
        mu_data: vec![0.5, 0.5],
        pi_b: vec![0.5; 4],
        seed: 0,
        n: 1,
    };
    let one = Dataset {
        meta: meta.clone(),
        tuples: vec![Transition {
            s: 1,
            a: 0,
            r: 0.0,
            s_next: 0,
        }],
    };
    assert_eq!(
        empirical_state_action_dist(&one).unwrap().weights(),
        &[0.0, 0.0, 1.0, 0.0]
    );
    let tuples: Vec<Transition> = (0..8)
        .map(|i| Transition {
            s: i % 2,
            a: (i / 2) % 2,
            r: 0.0,
            s_next: 0,
        })
        .collect();
    let balanced = Dataset {
        meta: DatasetMeta {
            n: 8,
            ..meta.clone()
        },
        tuples,
    };
    assert_eq!(
        empirical_state_action_dist(&balanced).unwrap().weights(),
        &[0.25; 4]
    );
    let empty = Dataset {
        meta: DatasetMeta { n: 0, ..meta },
        tuples: vec![],
    };
    assert!(matches!(
        empirical_state_action_dist(&empty),
        Err(Error::EmptyDataset)
    ));
}

#[test]
fn inconsistent_tuples_are_caught() {
    let m = random_mdp(3, 2, 0.9, 1, 0.0).unwrap();
    let mut ds = sample_dataset(
        &m,
        &StateDistribution::uniform(3),
        &Policy::uniform(3, 2),
        10,
        1,
    )
    .unwrap();
    ds.tuples[4].r += 1e-12;
    assert!(ds.check_consistency(&m).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn sampling_is_seeded_consistent_and_round_trips(
        ns in 1usize..6, na in 1usize..4, mdp_seed in any::<u64>(), seed in any::<u64>(), n in 1usize..9000
    ) {
        let m = random_mdp(ns, na, 0.9, mdp_seed, 0.4).unwrap();
        let mu = StateDistribution::new(m.initial_dist().to_vec()).unwrap();
        let pi_b = Policy::uniform(ns, na);
        let ds = sample_dataset(&m, &mu, &pi_b, n, seed).unwrap();
        prop_assert_eq!(ds.len(), n);
        prop_assert_eq!(&ds, &sample_dataset(&m, &mu, &pi_b, n, seed).unwrap());
        ds.check_consistency(&m).unwrap();
        prop_assert!(ds.tuples.iter().all(|t| mu.weights()[t.s] > 0.0));

        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        let back = Dataset::read_jsonl(&buf[..]).unwrap();
        prop_assert_eq!(&back, &ds);
        for (a, b) in back.tuples.iter().zip(&ds.tuples) {
            prop_assert_eq!(a.r.to_bits(), b.r.to_bits());
        }
    }
}
