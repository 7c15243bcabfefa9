//! Finite discounted MDPs, tabular policies and exact Bellman machinery.
//!
//! States and actions are zero-based indices. Every state-action table is
//! stored flat in s-major order: entry `(s, a)` lives at `s * n_actions + a`,
//! and the transition tensor entry `(s, a, s')` at
//! `(s * n_actions + a) * n_states + s'`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, solve_dense};
use crate::occupancy::{occupancy_measure, Start};

/// Tolerance on transition-row and initial-distribution normalization.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Relative tolerance under which two action values count as tied in a greedy argmax.
pub const TIE_TOL: f64 = 1e-10;

/// A real-valued table over `S x A`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

/// Tabulated state-action value function.
pub type QFunction = SaTable;

impl SaTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self::constant(n_states, n_actions, 0.0)
    }

    pub fn constant(n_states: usize, n_actions: usize, value: f64) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![value; n_states * n_actions],
        }
    }

    pub fn from_vec(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch(format!(
                "table of {} values for {n_states} states x {n_actions} actions",
                values.len()
            )));
        }
        Ok(Self {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn from_fn(
        n_states: usize,
        n_actions: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        let mut values = Vec::with_capacity(n_states * n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                values.push(f(s, a));
            }
        }
        Self {
            n_states,
            n_actions,
            values,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_states, self.n_actions)
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, value: f64) {
        self.values[s * self.n_actions + a] = value;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            n_states: self.n_states,
            n_actions: self.n_actions,
            values: self.values.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn max_value(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn state_max(&self, s: usize) -> f64 {
        self.row(s)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `max_a q(s, a)` for every state.
    pub fn max_over_actions(&self) -> Vec<f64> {
        (0..self.n_states).map(|s| self.state_max(s)).collect()
    }

    /// `q(s, pi) = sum_a pi(a|s) q(s, a)` for every state.
    pub fn under_policy(&self, policy: &Policy) -> Vec<f64> {
        (0..self.n_states)
            .map(|s| dot(self.row(s), policy.action_probs(s)))
            .collect()
    }

    pub fn max_abs_diff(&self, other: &SaTable) -> f64 {
        crate::linalg::max_abs_diff(&self.values, &other.values)
    }
}

/// A finite MDP `(S, A, P, R, gamma, mu_0)` with deterministic rewards in `[0, r_max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpRecord", into = "MdpRecord")]
pub struct TabularMDP {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    gamma: f64,
    r_max: f64,
    initial_dist: Vec<f64>,
}

/// On-disk layout of an MDP file. Field names are the documented file keys.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct MdpRecord {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    r_max: f64,
    /// Flattened `(s, a, s')`, row-major.
    transition: Vec<f64>,
    /// Flattened `(s, a)`, row-major.
    reward: Vec<f64>,
    initial_dist: Vec<f64>,
}

impl TryFrom<MdpRecord> for TabularMDP {
    type Error = Error;

    fn try_from(r: MdpRecord) -> Result<Self> {
        TabularMDP::new(
            r.n_states,
            r.n_actions,
            r.transition,
            r.reward,
            r.gamma,
            r.r_max,
            r.initial_dist,
        )
    }
}

impl From<TabularMDP> for MdpRecord {
    fn from(m: TabularMDP) -> Self {
        MdpRecord {
            n_states: m.n_states,
            n_actions: m.n_actions,
            gamma: m.gamma,
            r_max: m.r_max,
            transition: m.transition,
            reward: m.reward,
            initial_dist: m.initial_dist,
        }
    }
}

impl TabularMDP {
    /// Builds and validates an MDP.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        r_max: f64,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        validate_mdp(TabularMDP {
            n_states,
            n_actions,
            transition,
            reward,
            gamma,
            r_max,
            initial_dist,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// `V_max = R_max / (1 - gamma)`.
    pub fn v_max(&self) -> f64 {
        self.r_max / (1.0 - self.gamma)
    }

    #[inline]
    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + next]
    }

    /// `P(. | s, a)`.
    #[inline]
    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn reward_table(&self) -> SaTable {
        SaTable {
            n_states: self.n_states,
            n_actions: self.n_actions,
            values: self.reward.clone(),
        }
    }

    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    /// A copy with a different initial distribution.
    pub fn with_initial_dist(&self, initial_dist: Vec<f64>) -> Result<Self> {
        let mut m = self.clone();
        m.initial_dist = initial_dist;
        validate_mdp(m)
    }

    /// Stable FNV-1a digest of the model's bit patterns.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        eat(&(self.n_states as u64).to_le_bytes());
        eat(&(self.n_actions as u64).to_le_bytes());
        for x in self
            .transition
            .iter()
            .chain(&self.reward)
            .chain(&self.initial_dist)
            .chain([&self.gamma, &self.r_max])
        {
            eat(&x.to_bits().to_le_bytes());
        }
        h
    }

    /// `sum_{s'} P(s'|s,a) v(s')` for every pair.
    pub fn expected_next(&self, v: &[f64]) -> SaTable {
        SaTable::from_fn(self.n_states, self.n_actions, |s, a| {
            dot(self.next_dist(s, a), v)
        })
    }

    /// State-to-state kernel under `policy`: `P_pi(s' | s) = sum_a pi(a|s) P(s'|s,a)`, row-major.
    pub fn state_kernel(&self, policy: &Policy) -> Vec<f64> {
        let n = self.n_states;
        let mut k = vec![0.0; n * n];
        for s in 0..n {
            for a in 0..self.n_actions {
                let pa = policy.prob(s, a);
                if pa == 0.0 {
                    continue;
                }
                for (next, p) in self.next_dist(s, a).iter().enumerate() {
                    k[s * n + next] += pa * p;
                }
            }
        }
        k
    }

    /// Pushes a state distribution one step forward under `policy`.
    pub fn step_states(&self, mu: &[f64], policy: &Policy) -> Vec<f64> {
        let mut out = vec![0.0; self.n_states];
        for (s, &m) in mu.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for a in 0..self.n_actions {
                let w = m * policy.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                for (next, p) in self.next_dist(s, a).iter().enumerate() {
                    out[next] += w * p;
                }
            }
        }
        out
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// Returns the MDP unchanged iff every invariant holds, otherwise the first violation.
pub fn validate_mdp(mdp: TabularMDP) -> Result<TabularMDP> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    if ns == 0 || na == 0 {
        return Err(Error::InvalidParameter(
            "an MDP needs at least one state and one action".into(),
        ));
    }
    if mdp.transition.len() != ns * na * ns {
        return Err(Error::DimensionMismatch(format!(
            "transition has {} entries, expected {}",
            mdp.transition.len(),
            ns * na * ns
        )));
    }
    if mdp.reward.len() != ns * na {
        return Err(Error::DimensionMismatch(format!(
            "reward has {} entries, expected {}",
            mdp.reward.len(),
            ns * na
        )));
    }
    if mdp.initial_dist.len() != ns {
        return Err(Error::DimensionMismatch(format!(
            "initial distribution has {} entries, expected {ns}",
            mdp.initial_dist.len()
        )));
    }
    if !(mdp.gamma > 0.0 && mdp.gamma < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma = {} is outside (0, 1)",
            mdp.gamma
        )));
    }
    if !(mdp.r_max.is_finite() && mdp.r_max >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "r_max = {} is invalid",
            mdp.r_max
        )));
    }
    for s in 0..ns {
        for a in 0..na {
            let row = mdp.next_dist(s, a);
            if let Some((next, p)) = row.iter().enumerate().find(|(_, p)| !(**p >= 0.0)) {
                return Err(Error::InvalidTransition {
                    state: s,
                    action: a,
                    detail: format!("negative or NaN probability {p} for next state {next}"),
                });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::InvalidTransition {
                    state: s,
                    action: a,
                    detail: format!("row sums to {sum} (deviation {:e})", sum - 1.0),
                });
            }
            let r = mdp.reward(s, a);
            if !(r >= 0.0 && r <= mdp.r_max) {
                return Err(Error::RewardOutOfRange {
                    state: s,
                    action: a,
                    value: r,
                    r_max: mdp.r_max,
                });
            }
        }
    }
    check_distribution(&mdp.initial_dist, NORMALIZATION_TOL, "initial distribution")?;
    Ok(mdp)
}

pub(crate) fn check_distribution(w: &[f64], tol: f64, what: &str) -> Result<()> {
    if let Some((i, x)) = w.iter().enumerate().find(|(_, x)| !(**x >= 0.0)) {
        return Err(Error::InvalidDistribution(format!(
            "{what}: entry {i} is {x}"
        )));
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::InvalidDistribution(format!(
            "{what}: sums to {sum} (deviation {:e})",
            sum - 1.0
        )));
    }
    Ok(())
}

/// A stationary stochastic policy `pi(a|s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    probs: SaTable,
}

impl Policy {
    pub fn new(probs: SaTable) -> Result<Self> {
        for s in 0..probs.n_states() {
            let row = probs.row(s);
            if let Some((a, p)) = row.iter().enumerate().find(|(_, p)| !(**p >= 0.0)) {
                return Err(Error::InvalidPolicy {
                    state: s,
                    detail: format!("probability {p} for action {a}"),
                });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::InvalidPolicy {
                    state: s,
                    detail: format!("row sums to {sum}"),
                });
            }
        }
        Ok(Self { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: SaTable::constant(n_states, n_actions, 1.0 / n_actions as f64),
        }
    }

    /// Deterministic policy taking `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        if let Some((s, &a)) = actions.iter().enumerate().find(|(_, &a)| a >= n_actions) {
            return Err(Error::InvalidPolicy {
                state: s,
                detail: format!("action {a} out of range"),
            });
        }
        Ok(Self {
            probs: SaTable::from_fn(actions.len(), n_actions, |s, a| {
                if actions[s] == a {
                    1.0
                } else {
                    0.0
                }
            }),
        })
    }

    pub fn n_states(&self) -> usize {
        self.probs.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.n_actions()
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs.get(s, a)
    }

    pub fn action_probs(&self, s: usize) -> &[f64] {
        self.probs.row(s)
    }

    pub fn table(&self) -> &SaTable {
        &self.probs
    }

    /// The chosen action at every state, if the policy is deterministic.
    pub fn as_deterministic(&self) -> Option<Vec<usize>> {
        (0..self.n_states())
            .map(|s| self.action_probs(s).iter().position(|&p| p == 1.0))
            .collect()
    }
}

/// A policy switching rules over time: `prefix[t]` acts at step `t < H`,
/// `tail` acts from step `H` onward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonStationaryPolicy {
    prefix: Vec<Policy>,
    tail: Policy,
}

impl NonStationaryPolicy {
    pub fn new(prefix: Vec<Policy>, tail: Policy) -> Result<Self> {
        let dims = (tail.n_states(), tail.n_actions());
        if let Some(t) = prefix
            .iter()
            .position(|p| (p.n_states(), p.n_actions()) != dims)
        {
            return Err(Error::DimensionMismatch(format!(
                "prefix step {t} has different dimensions from the tail"
            )));
        }
        Ok(Self { prefix, tail })
    }

    pub fn stationary(policy: Policy) -> Self {
        Self {
            prefix: Vec::new(),
            tail: policy,
        }
    }

    /// Follows `first` for steps `0..=switch_step`, then `then` forever.
    pub fn switched(first: &Policy, switch_step: usize, then: &Policy) -> Self {
        Self {
            prefix: vec![first.clone(); switch_step + 1],
            tail: then.clone(),
        }
    }

    pub fn prefix(&self) -> &[Policy] {
        &self.prefix
    }
}

/// Anything that prescribes an action distribution at each time step.
pub trait StepPolicy {
    fn at_step(&self, t: usize) -> &Policy;
    /// Number of leading steps with their own rule; from this step on the tail applies.
    fn horizon(&self) -> usize;
    fn tail(&self) -> &Policy;
}

impl StepPolicy for Policy {
    fn at_step(&self, _t: usize) -> &Policy {
        self
    }

    fn horizon(&self) -> usize {
        0
    }

    fn tail(&self) -> &Policy {
        self
    }
}

impl StepPolicy for NonStationaryPolicy {
    fn at_step(&self, t: usize) -> &Policy {
        self.prefix.get(t).unwrap_or(&self.tail)
    }

    fn horizon(&self) -> usize {
        self.prefix.len()
    }

    fn tail(&self) -> &Policy {
        &self.tail
    }
}

/// Applies the Bellman optimality operator `T* q = R + gamma E[max q(s', .)]`.
pub fn bellman_optimality(mdp: &TabularMDP, q: &QFunction) -> QFunction {
    let v = q.max_over_actions();
    let next = mdp.expected_next(&v);
    SaTable::from_fn(mdp.n_states, mdp.n_actions, |s, a| {
        mdp.reward(s, a) + mdp.gamma * next.get(s, a)
    })
}

/// Value iteration from `q = 0` until the Bellman residual guarantees `||q - Q*||_inf <= tol`.
pub fn value_iteration(mdp: &TabularMDP, tol: f64) -> Result<QFunction> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tol = {tol} must be positive"
        )));
    }
    // ||q - Q*|| <= ||q - T q|| / (1 - gamma), so stop at half the budget.
    let target = tol * (1.0 - mdp.gamma) / 2.0;
    let mut q = SaTable::zeros(mdp.n_states, mdp.n_actions);
    let mut iterations = 0usize;
    loop {
        let next = bellman_optimality(mdp, &q);
        let residual = next.max_abs_diff(&q);
        iterations += 1;
        if residual <= target {
            log::debug!(
                "value iteration converged after {iterations} sweeps (residual {residual:e})"
            );
            return Ok(q);
        }
        q = next;
    }
}

/// Exact `Q_pi` from the linear system `(I - gamma P_pi^*) Q = R`.
pub fn policy_q_values(mdp: &TabularMDP, policy: &Policy) -> Result<QFunction> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let n = ns * na;
    let mut a = vec![0.0; n * n];
    for s in 0..ns {
        for act in 0..na {
            let row = s * na + act;
            a[row * n + row] += 1.0;
            for (next, p) in mdp.next_dist(s, act).iter().enumerate() {
                if *p == 0.0 {
                    continue;
                }
                for next_a in 0..na {
                    a[row * n + next * na + next_a] -= mdp.gamma * p * policy.prob(next, next_a);
                }
            }
        }
    }
    let scale = mdp.v_max().max(1.0);
    let values = solve_dense(n, &a, &mdp.reward, 1e-10 * scale)?;
    SaTable::from_vec(ns, na, values)
}

/// `V_pi(s) = sum_a pi(a|s) Q_pi(s, a)`.
pub fn policy_state_values(mdp: &TabularMDP, policy: &Policy) -> Result<Vec<f64>> {
    Ok(policy_q_values(mdp, policy)?.under_policy(policy))
}

/// `J_pi` from the MDP's initial distribution. Non-stationary policies are
/// rolled forward through their prefix and closed with an exact tail evaluation.
pub fn expected_return<P: StepPolicy + ?Sized>(mdp: &TabularMDP, policy: &P) -> Result<f64> {
    let mut mu = mdp.initial_dist.clone();
    let mut total = 0.0;
    let mut discount = 1.0;
    for t in 0..policy.horizon() {
        let pi = policy.at_step(t);
        let r = mdp.reward_table().under_policy(pi);
        total += discount * dot(&mu, &r);
        mu = mdp.step_states(&mu, pi);
        discount *= mdp.gamma;
    }
    let v_tail = policy_state_values(mdp, policy.tail())?;
    Ok(total + discount * dot(&mu, &v_tail))
}

/// Deterministic argmax policy; ties (within [`TIE_TOL`]) go to the lowest action index.
pub fn greedy_policy(q: &QFunction) -> Policy {
    let actions: Vec<usize> = (0..q.n_states()).map(|s| greedy_action(q.row(s))).collect();
    Policy::deterministic(&actions, q.n_actions()).expect("greedy actions are in range")
}

pub(crate) fn greedy_action(row: &[f64]) -> usize {
    let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slack = TIE_TOL * best.abs().max(1.0);
    row.iter()
        .position(|&x| x >= best - slack)
        .expect("non-empty action set")
}

/// Both sides of `(1-gamma)(J_pi1 - J_pi2) = <mu_pi1, Q_pi2(., pi1) - Q_pi2(., pi2)>`,
/// each computed along its own route.
pub fn performance_difference(mdp: &TabularMDP, pi1: &Policy, pi2: &Policy) -> Result<(f64, f64)> {
    let lhs = (1.0 - mdp.gamma) * (expected_return(mdp, pi1)? - expected_return(mdp, pi2)?);
    let start = Start::initial(mdp);
    let mu1 = occupancy_measure(mdp, pi1, &start)?.state_marginal();
    let q2 = policy_q_values(mdp, pi2)?;
    let adv: Vec<f64> = q2
        .under_policy(pi1)
        .iter()
        .zip(q2.under_policy(pi2))
        .map(|(x, y)| x - y)
        .collect();
    Ok((lhs, dot(&mu1, &adv)))
}

/// Exact optimal quantities: `Q*`, `V*`, the greedy `pi*_e` and `J*`.
#[derive(Clone, Debug)]
pub struct OptimalSolution {
    pub q_star: QFunction,
    pub v_star: Vec<f64>,
    pub pi_star: Policy,
    pub j_star: f64,
}

/// Solves for `Q*` by value iteration followed by policy-iteration polishing,
/// so the result is exact up to a single linear solve.
pub fn solve_optimal(mdp: &TabularMDP) -> Result<OptimalSolution> {
    let q0 = value_iteration(mdp, 1e-8 * mdp.v_max().max(1.0))?;
    let mut pi = greedy_policy(&q0);
    let mut q = policy_q_values(mdp, &pi)?;
    for _ in 0..100 {
        let next = greedy_policy(&q);
        if next == pi {
            break;
        }
        pi = next;
        q = policy_q_values(mdp, &pi)?;
    }
    let v_star = q.under_policy(&pi);
    let j_star = dot(&mdp.initial_dist, &v_star);
    Ok(OptimalSolution {
        q_star: q,
        v_star,
        pi_star: pi,
        j_star,
    })
}

/// `min_pi J_pi`, attained by a deterministic stationary policy.
pub fn minimum_return(mdp: &TabularMDP) -> Result<f64> {
    let neg = TabularMDP {
        reward: mdp.reward.iter().map(|r| mdp.r_max - r).collect(),
        ..mdp.clone()
    };
    // J_min(R) = V_max-shift - J_max(r_max - R)
    let best = solve_optimal(&neg)?;
    Ok(mdp.r_max / (1.0 - mdp.gamma) - best.j_star)
}
