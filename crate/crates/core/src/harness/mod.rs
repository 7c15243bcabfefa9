//! Built-in MDPs, experiment configuration and the end-to-end runner.

mod config;
mod experiment;

pub use config::{
    BehaviorSpec, ClassSpec, CoveringMode, CoveringSpec, DataSpec, ExperimentConfig, MdpSpec,
    PiCSpec, RunSpec, StateSpec,
};
pub use experiment::{
    adversarial_policy, run_experiment, run_row, summarize, write_rows, Covering, ExperimentRow,
    Instance,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::mdp::TabularMDP;

/// The four-state chain with two optimal routes from state 0.
///
/// States `0..4`, actions `0 = L`, `1 = R`. From 0, `L -> 2` and `R -> 1`;
/// from 2, `L -> 3` and `R -> 0`; states 1 and 3 absorb. Rewards are 1 on
/// state 1 and `1/gamma` on state 3, and the episode starts in state 0.
pub fn counterexample(gamma: f64) -> Result<TabularMDP> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma = {gamma} must lie in (0, 1)"
        )));
    }
    let next = [[2, 1], [1, 1], [3, 0], [3, 3]];
    let mut p = vec![0.0; 4 * 2 * 4];
    for (s, row) in next.iter().enumerate() {
        for (a, &to) in row.iter().enumerate() {
            p[(s * 2 + a) * 4 + to] = 1.0;
        }
    }
    let high = 1.0 / gamma;
    let r = vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0, high, high];
    TabularMDP::new(4, 2, p, r, gamma, high, vec![1.0, 0.0, 0.0, 0.0])
}

fn dirichlet_row(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = draws.iter().sum();
    let mut row: Vec<f64> = draws.iter().map(|x| x / total).collect();
    // put the rounding residue on the largest entry so the row sums to 1 tightly
    let residue = 1.0 - row.iter().sum::<f64>();
    let k = (0..n).fold(0, |b, i| if row[i] > row[b] { i } else { b });
    row[k] += residue;
    row
}

/// A random MDP with flat-Dirichlet transition rows and initial distribution,
/// and rewards that are 0 with probability `reward_sparsity` and `U[0, 1]` otherwise.
pub fn random_mdp(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    seed: u64,
    reward_sparsity: f64,
) -> Result<TabularMDP> {
    if n_states == 0 || n_actions == 0 {
        return Err(Error::InvalidParameter("sizes must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&reward_sparsity) {
        return Err(Error::InvalidParameter(format!(
            "reward sparsity {reward_sparsity} must lie in [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        p.extend(dirichlet_row(&mut rng, n_states));
    }
    let r = (0..n_states * n_actions)
        .map(|_| {
            let keep = rng.random::<f64>() >= reward_sparsity;
            let value = rng.random::<f64>();
            if keep {
                value
            } else {
                0.0
            }
        })
        .collect();
    let mu0 = dirichlet_row(&mut rng, n_states);
    TabularMDP::new(n_states, n_actions, p, r, gamma, 1.0, mu0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{expected_return, solve_optimal, validate_mdp, Policy};
    use approx::assert_abs_diff_eq;

    #[test]
    fn counterexample_values() {
        let m = counterexample(0.9).unwrap();
        let opt = solve_optimal(&m).unwrap();
        assert_abs_diff_eq!(opt.j_star, 9.0, epsilon = 1e-9);
        let bad = Policy::deterministic(&[0, 0, 1, 0], 2).unwrap();
        assert_abs_diff_eq!(expected_return(&m, &bad).unwrap(), 0.0, epsilon = 1e-12);
        assert!(counterexample(1.0).is_err());
    }

    #[test]
    fn random_mdps_are_seeded_and_valid() {
        let a = random_mdp(5, 3, 0.9, 7, 0.5).unwrap();
        assert_eq!(a, random_mdp(5, 3, 0.9, 7, 0.5).unwrap());
        assert_ne!(a, random_mdp(5, 3, 0.9, 8, 0.5).unwrap());
        validate_mdp(a).unwrap();
        let zero = random_mdp(4, 2, 0.9, 1, 1.0).unwrap();
        assert!(zero.reward_table().values().iter().all(|r| *r == 0.0));
        assert_eq!(solve_optimal(&zero).unwrap().j_star, 0.0);
    }
}
