//! Test-side oracles, written without the library's solvers.
#![allow(dead_code)]

use proptest::prelude::*;
use vopr::harness::random_mdp;
use vopr::{Policy, SaTable, TabularMDP};

/// Gaussian elimination with partial pivoting on a row-major square system.
pub fn gauss_solve(n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = a[i * n..(i + 1) * n].to_vec();
            row.push(b[i]);
            row
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .unwrap();
        m.swap(col, piv);
        let p = m[col][col];
        assert!(p.abs() > 1e-14, "singular oracle system");
        let pivot = m[col].clone();
        for (r, row) in m.iter_mut().enumerate() {
            let f = row[col] / p;
            if r != col && f != 0.0 {
                for (x, y) in row[col..].iter_mut().zip(&pivot[col..]) {
                    *x -= f * y;
                }
            }
        }
    }
    (0..n).map(|i| m[i][n] / m[i][i]).collect()
}

/// `Q_pi` from the `SA x SA` Bellman evaluation system built entry by entry.
pub fn oracle_q(mdp: &TabularMDP, pi: &Policy) -> Vec<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let n = ns * na;
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n];
    for s in 0..ns {
        for ac in 0..na {
            let i = s * na + ac;
            a[i * n + i] += 1.0;
            b[i] = mdp.reward(s, ac);
            for s2 in 0..ns {
                for a2 in 0..na {
                    a[i * n + s2 * na + a2] -= mdp.gamma() * mdp.p(s, ac, s2) * pi.prob(s2, a2);
                }
            }
        }
    }
    gauss_solve(n, &a, &b)
}

/// One forward step of a state-action density.
pub fn step(mdp: &TabularMDP, pi: &Policy, d: &[f64]) -> Vec<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut out = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            for s2 in 0..ns {
                for a2 in 0..na {
                    out[s2 * na + a2] += d[s * na + a] * mdp.p(s, a, s2) * pi.prob(s2, a2);
                }
            }
        }
    }
    out
}

pub fn compose(mu: &[f64], pi: &Policy) -> Vec<f64> {
    let na = pi.n_actions();
    (0..mu.len() * na)
        .map(|i| mu[i / na] * pi.prob(i / na, i % na))
        .collect()
}

/// `(1 - gamma) sum_t gamma^t d_t` by forward iteration until `gamma^t < 1e-17`.
pub fn oracle_occupancy(mdp: &TabularMDP, pi: &Policy, d0: &[f64]) -> Vec<f64> {
    let g = mdp.gamma();
    let mut d = d0.to_vec();
    let mut acc = vec![0.0; d.len()];
    let mut coef = 1.0 - g;
    while coef > 1e-17 {
        for (x, y) in acc.iter_mut().zip(&d) {
            *x += coef * y;
        }
        d = step(mdp, pi, &d);
        coef *= g;
    }
    acc
}

/// Return of a policy sequence (`policies[t]` at step `t`, last one repeated) by forward rollout of densities.
pub fn oracle_return(mdp: &TabularMDP, policies: &[Policy]) -> f64 {
    let g = mdp.gamma();
    let at = |t: usize| &policies[t.min(policies.len() - 1)];
    let mut d = compose(mdp.initial_dist(), at(0));
    let mut total = 0.0;
    let mut disc = 1.0;
    let mut t = 0;
    while disc > 1e-17 {
        total += disc
            * d.iter()
                .enumerate()
                .map(|(i, x)| x * mdp.reward(i / mdp.n_actions(), i % mdp.n_actions()))
                .sum::<f64>();
        t += 1;
        d = step(mdp, at(t), &d);
        disc *= g;
    }
    total
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn normalized(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

pub fn policy_from_raw(ns: usize, na: usize, raw: &[f64]) -> Policy {
    let mut v = Vec::with_capacity(ns * na);
    for row in raw.chunks(na) {
        v.extend(normalized(row));
    }
    Policy::new(SaTable::from_vec(ns, na, v).unwrap()).unwrap()
}

/// Every deterministic stationary policy, in lexicographic order.
pub fn all_deterministic(ns: usize, na: usize) -> Vec<Policy> {
    let total = na.pow(ns as u32);
    (0..total)
        .map(|mut code| {
            let mut acts = vec![0; ns];
            for s in (0..ns).rev() {
                acts[s] = code % na;
                code /= na;
            }
            Policy::deterministic(&acts, na).unwrap()
        })
        .collect()
}

/// A seeded random MDP with a random policy and a random positive vector.
#[derive(Clone, Debug)]
pub struct Case {
    pub mdp: TabularMDP,
    pub pi: Policy,
    pub pi2: Policy,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

pub fn case(max_states: usize, max_actions: usize, gamma_max: f64) -> impl Strategy<Value = Case> {
    (
        1..=max_states,
        1..=max_actions,
        0.05..gamma_max,
        any::<u64>(),
        0.0..1.0f64,
    )
        .prop_flat_map(|(ns, na, g, seed, sparsity)| {
            let n = ns * na;
            (
                Just(random_mdp(ns, na, g, seed, sparsity).unwrap()),
                prop::collection::vec(0.01..1.0f64, n),
                prop::collection::vec(0.01..1.0f64, n),
                prop::collection::vec(0.0..1.0f64, n),
                prop::collection::vec(-1.0..1.0f64, n),
            )
                .prop_map(move |(mdp, p1, p2, x, y)| Case {
                    pi: policy_from_raw(ns, na, &p1),
                    pi2: policy_from_raw(ns, na, &p2),
                    mdp,
                    x,
                    y,
                })
        })
}
