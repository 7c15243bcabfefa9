//! Exact oracles for the coverage assumptions and the lemma chain: near-optimal
//! policy enumeration, concentrability coefficients, and the inequalities that
//! take a zero-advantage policy to a near-optimal one.

use std::collections::HashSet;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, solve_dense};
use crate::mdp::{
    expected_return, minimum_return, policy_state_values, solve_optimal, NonStationaryPolicy,
    OptimalSolution, Policy, QFunction, SaTable, StepPolicy, TabularMDP,
};
use crate::occupancy::{
    occupancy_measure, state_occupancy, sup_ratio_at, transition_apply, truncated_occupancy,
    SaDistribution, Start, StateDistribution, StepDistributions,
};
use crate::solver::{weighted_l1, weighted_l2};

/// Default bound on evaluated candidates during enumeration.
pub const DEFAULT_ENUMERATION_CAP: usize = 2_000_000;

/// Tolerance used for the premise `<mu_c, Q*(., pi^) - V*> >= -eps`.
pub const PREMISE_TOL: f64 = 1e-9;

/// Grid used to merge enumeration nodes with identical behavior.
const MERGE_QUANTUM: f64 = 1e-12;

fn slack(mdp: &TabularMDP) -> f64 {
    1e-9 * mdp.v_max().max(1.0)
}

/// A deterministic non-stationary policy that passed the near-optimality filter.
#[derive(Clone, Debug)]
pub struct NearOptimalPolicy {
    pub policy: NonStationaryPolicy,
    pub ret: f64,
    /// Normalized discounted state occupancy from `mu_0`.
    pub state_occupancy: Vec<f64>,
}

struct Node {
    mu: Vec<f64>,
    occ: Vec<f64>,
    ret: f64,
    actions: Vec<Vec<usize>>,
}

impl Node {
    fn key(&self) -> Vec<i64> {
        self.mu
            .iter()
            .chain(&self.occ)
            .chain(std::iter::once(&self.ret))
            .map(|x| (x / MERGE_QUANTUM).round() as i64)
            .collect()
    }
}

/// Calls `f` on every vector in the product `choices[0] x choices[1] x ...`,
/// in lexicographic order, stopping early when `f` returns `false`.
fn for_each_combination(choices: &[Vec<usize>], mut f: impl FnMut(&[usize]) -> bool) {
    if choices.iter().any(Vec::is_empty) {
        return;
    }
    let mut idx = vec![0usize; choices.len()];
    let mut current: Vec<usize> = choices.iter().map(|c| c[0]).collect();
    loop {
        if !f(&current) {
            return;
        }
        let mut k = choices.len();
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < choices[k].len() {
                current[k] = choices[k][idx[k]];
                break;
            }
            idx[k] = 0;
            current[k] = choices[k][0];
        }
    }
}

struct Tail {
    policy: Policy,
    values: Vec<f64>,
}

fn deterministic_tails(mdp: &TabularMDP, cap: usize) -> Result<Vec<Tail>> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let count = u32::try_from(ns)
        .ok()
        .and_then(|n| na.checked_pow(n))
        .filter(|c| *c <= cap)
        .ok_or(Error::EnumerationTooLarge { cap })?;
    let choices = vec![(0..na).collect::<Vec<_>>(); ns];
    let mut all = Vec::with_capacity(count);
    for_each_combination(&choices, |a| {
        all.push(a.to_vec());
        true
    });
    all.into_par_iter()
        .map(|actions| {
            let policy = Policy::deterministic(&actions, na)?;
            let values = policy_state_values(mdp, &policy)?;
            Ok(Tail { policy, values })
        })
        .collect()
}

/// `(1 - gamma) mu (I - gamma K_pi)^{-1}` as a state vector.
fn stationary_state_occupancy(mdp: &TabularMDP, policy: &Policy, mu: &[f64]) -> Result<Vec<f64>> {
    let n = mdp.n_states();
    let k = mdp.state_kernel(policy);
    // transpose system: (I - gamma K)^T x = (1 - gamma) mu
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[j * n + i] = if i == j { 1.0 } else { 0.0 } - mdp.gamma() * k[i * n + j];
        }
    }
    let rhs: Vec<f64> = mu.iter().map(|m| (1.0 - mdp.gamma()) * m).collect();
    let mut x = solve_dense(n, &a, &rhs, 1e-10)?;
    crate::linalg::snap_roundoff(&mut x);
    Ok(x)
}

/// Enumerates deterministic non-stationary policies with a prefix of `horizon`
/// steps and a deterministic stationary tail whose return is within `eps` of `J*`.
///
/// Prefix actions are branched only at states that carry probability mass at
/// that step (elsewhere the greedy optimal action is used), and prefixes that
/// lead to the same state flow, occupancy and return are merged. Every
/// deterministic tail is tried at each surviving leaf.
pub fn near_optimal_policies(
    mdp: &TabularMDP,
    opt: &OptimalSolution,
    eps: f64,
    horizon: usize,
    cap: usize,
) -> Result<Vec<NearOptimalPolicy>> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eps = {eps} must be non-negative"
        )));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.gamma();
    let threshold = opt.j_star - eps - slack(mdp);
    let default_actions = opt
        .pi_star
        .as_deterministic()
        .expect("greedy policy is deterministic");
    let mut evaluated = 0usize;

    let mut frontier = vec![Node {
        mu: mdp.initial_dist().to_vec(),
        occ: vec![0.0; ns],
        ret: 0.0,
        actions: Vec::new(),
    }];
    let mut discount = 1.0;
    for _t in 0..horizon {
        let mut next: Vec<Node> = Vec::new();
        let mut seen: HashSet<Vec<i64>> = HashSet::new();
        for node in &frontier {
            let optimistic = node.ret + discount * dot(&node.mu, &opt.v_star);
            let budget = optimistic - threshold;
            let choices: Vec<Vec<usize>> = (0..ns)
                .map(|s| {
                    if node.mu[s] == 0.0 {
                        return vec![default_actions[s]];
                    }
                    (0..na)
                        .filter(|&a| {
                            discount * node.mu[s] * (opt.v_star[s] - opt.q_star.get(s, a)) <= budget
                        })
                        .collect()
                })
                .collect();
            let mut failure = None;
            for_each_combination(&choices, |acts| {
                evaluated += 1;
                if evaluated > cap {
                    failure = Some(Error::EnumerationTooLarge { cap });
                    return false;
                }
                let bound = node.ret
                    + discount
                        * (0..ns)
                            .map(|s| node.mu[s] * opt.q_star.get(s, acts[s]))
                            .sum::<f64>();
                if bound < threshold {
                    return true;
                }
                let step = Policy::deterministic(acts, na).expect("actions in range");
                let r: f64 = (0..ns).map(|s| node.mu[s] * mdp.reward(s, acts[s])).sum();
                let mut occ = node.occ.clone();
                for (o, m) in occ.iter_mut().zip(&node.mu) {
                    *o += (1.0 - gamma) * discount * m;
                }
                let mut mu = mdp.step_states(&node.mu, &step);
                crate::linalg::snap_roundoff(&mut mu);
                let mut actions = node.actions.clone();
                actions.push(acts.to_vec());
                let child = Node {
                    mu,
                    occ,
                    ret: node.ret + discount * r,
                    actions,
                };
                let key = child.key();
                if seen.insert(key) {
                    next.push(child);
                }
                true
            });
            if let Some(e) = failure {
                return Err(e);
            }
        }
        frontier = next;
        discount *= gamma;
    }

    let tails = deterministic_tails(mdp, cap)?;
    let mut out = Vec::new();
    for node in &frontier {
        evaluated += tails.len();
        if evaluated > cap {
            return Err(Error::EnumerationTooLarge { cap });
        }
        for tail in &tails {
            let ret = node.ret + discount * dot(&node.mu, &tail.values);
            if ret < threshold {
                continue;
            }
            let mut occ = node.occ.clone();
            let rest = stationary_state_occupancy(mdp, &tail.policy, &node.mu)?;
            for (o, r) in occ.iter_mut().zip(rest) {
                *o += discount * r;
            }
            let prefix = node
                .actions
                .iter()
                .map(|a| Policy::deterministic(a, na))
                .collect::<Result<Vec<_>>>()?;
            out.push(NearOptimalPolicy {
                policy: NonStationaryPolicy::new(prefix, tail.policy.clone())?,
                ret,
                state_occupancy: occ,
            });
        }
    }
    log::debug!(
        "enumeration: eps {eps}, horizon {horizon}, {} leaves, {} policies",
        frontier.len(),
        out.len()
    );
    Ok(out)
}

/// A coverage coefficient with the policy and index attaining it.
#[derive(Clone, Debug)]
pub struct ConcentrabilityReport {
    pub coefficient: f64,
    pub witness_policy: Option<NonStationaryPolicy>,
    /// State (for `C_c`) or flat pair index (for `C_D`, per-step coverage).
    pub witness_index: usize,
    pub witness_ratio: f64,
    pub horizon_used: usize,
    pub policy_count: usize,
    /// Whether the value came from the exact all-policy computation.
    pub all_policies: bool,
}

impl ConcentrabilityReport {
    pub fn is_finite(&self) -> bool {
        self.coefficient.is_finite()
    }
}

/// `max_pi ||mu_pi / mu_c||_inf` over every policy, exact: the largest
/// discounted visitation of each state is an optimal value with reward `1[s]`.
pub fn all_policy_concentrability(
    mdp: &TabularMDP,
    mu_c: &StateDistribution,
) -> Result<ConcentrabilityReport> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if mu_c.len() != ns {
        return Err(Error::DimensionMismatch("mu_c vs MDP".into()));
    }
    let mut best = ConcentrabilityReport {
        coefficient: f64::NEG_INFINITY,
        witness_policy: None,
        witness_index: 0,
        witness_ratio: f64::NEG_INFINITY,
        horizon_used: 0,
        policy_count: 0,
        all_policies: true,
    };
    for target in 0..ns {
        let indicator = TabularMDP::new(
            ns,
            na,
            mdp.transition().to_vec(),
            (0..ns * na)
                .map(|i| if i / na == target { 1.0 } else { 0.0 })
                .collect(),
            mdp.gamma(),
            1.0,
            mdp.initial_dist().to_vec(),
        )?;
        let sol = solve_optimal(&indicator)?;
        let visit = ((1.0 - mdp.gamma()) * sol.j_star).clamp(0.0, 1.0);
        let visit = if visit < 1e-15 { 0.0 } else { visit };
        let den = mu_c.weights()[target];
        let ratio = if den > 0.0 {
            visit / den
        } else if visit > 0.0 {
            f64::INFINITY
        } else {
            1.0
        };
        best.policy_count += 1;
        if ratio > best.coefficient {
            best.coefficient = ratio;
            best.witness_ratio = ratio;
            best.witness_index = target;
            best.witness_policy = Some(NonStationaryPolicy::stationary(sol.pi_star));
        }
    }
    Ok(best)
}

/// `C_c = max ||mu_pi~ / mu_c||_inf` over the enumerated `eps` near-optimal
/// policies. When `eps` admits every policy the exact all-policy value is used.
pub fn concentrability_cc(
    mdp: &TabularMDP,
    opt: &OptimalSolution,
    mu_c: &StateDistribution,
    eps: f64,
    horizon: usize,
    cap: usize,
) -> Result<ConcentrabilityReport> {
    if mu_c.len() != mdp.n_states() {
        return Err(Error::DimensionMismatch("mu_c vs MDP".into()));
    }
    if eps >= opt.j_star - minimum_return(mdp)? + slack(mdp) {
        return all_policy_concentrability(mdp, mu_c);
    }
    let policies = near_optimal_policies(mdp, opt, eps, horizon, cap)?;
    let mut best = ConcentrabilityReport {
        coefficient: f64::NEG_INFINITY,
        witness_policy: None,
        witness_index: 0,
        witness_ratio: f64::NEG_INFINITY,
        horizon_used: horizon,
        policy_count: policies.len(),
        all_policies: false,
    };
    for p in &policies {
        let (ratio, at) = sup_ratio_at(&p.state_occupancy, mu_c.weights());
        if ratio > best.coefficient {
            best.coefficient = ratio;
            best.witness_ratio = ratio;
            best.witness_index = at;
            best.witness_policy = Some(p.policy.clone());
        }
    }
    Ok(best)
}

/// `C_D = ||d_{d_c, pi*_e} / d^D||_inf`.
pub fn concentrability_cd(
    mdp: &TabularMDP,
    opt: &OptimalSolution,
    d_c: &SaDistribution,
    d_data: &SaDistribution,
) -> Result<ConcentrabilityReport> {
    let flow = occupancy_measure(mdp, &opt.pi_star, &Start::Pairs(d_c.clone()))?;
    let (ratio, at) = sup_ratio_at(flow.weights(), d_data.weights());
    Ok(ConcentrabilityReport {
        coefficient: ratio,
        witness_policy: Some(NonStationaryPolicy::stationary(opt.pi_star.clone())),
        witness_index: at,
        witness_ratio: ratio,
        horizon_used: 0,
        policy_count: 1,
        all_policies: false,
    })
}

/// `sum_k lambda_k d_{pi_k}`, a covering distribution mixed from policy occupancies.
pub fn mixture_covering<P: StepPolicy + Sync>(
    mdp: &TabularMDP,
    policies: &[P],
    weights: &[f64],
) -> Result<SaDistribution> {
    if policies.is_empty() || policies.len() != weights.len() {
        return Err(Error::InvalidParameter(
            "mixture needs one weight per policy and at least one policy".into(),
        ));
    }
    crate::mdp::check_distribution(weights, 1e-10, "mixture weights")?;
    let start = Start::initial(mdp);
    let parts: Vec<Vec<f64>> = policies
        .par_iter()
        .map(|p| {
            Ok(truncated_occupancy(mdp, p, &start, 0, None)?
                .weights()
                .to_vec())
        })
        .collect::<Result<_>>()?;
    let mut acc = vec![0.0; mdp.n_pairs()];
    for (part, w) in parts.iter().zip(weights) {
        for (a, x) in acc.iter_mut().zip(part) {
            *a += w * x;
        }
    }
    let total: f64 = acc.iter().sum();
    for a in acc.iter_mut() {
        *a /= total;
    }
    SaDistribution::new(mdp.n_states(), mdp.n_actions(), acc)
}

/// Number of explicit steps after which `gamma^T <= tail_tol`.
pub fn geometric_horizon(gamma: f64, tail_tol: f64) -> usize {
    (tail_tol.ln() / gamma.ln()).ceil().max(0.0) as usize
}

/// `max ||d_{pi~_i, j} / d^D||_inf` over the listed policies, switch steps `i`
/// and steps `j >= i`, where `pi~_i` follows `pi~` up to step `i` and `pi*_e`
/// afterwards. Steps run until `gamma^T <= tail_tol`.
pub fn per_step_coverage<P: StepPolicy + Sync>(
    mdp: &TabularMDP,
    opt: &OptimalSolution,
    policies: &[P],
    d_data: &SaDistribution,
    tail_tol: f64,
) -> Result<ConcentrabilityReport> {
    let horizon = geometric_horizon(mdp.gamma(), tail_tol);
    let start = Start::initial(mdp);
    let per_policy: Vec<(f64, usize)> = policies
        .par_iter()
        .map(|p| {
            let mut best = (f64::NEG_INFINITY, 0usize);
            let mut note = |d: &[f64]| {
                let (r, at) = sup_ratio_at(d, d_data.weights());
                if r > best.0 {
                    best = (r, at);
                }
            };
            for (i, d_i) in StepDistributions::new(mdp, p, &start)?
                .take(horizon + 1)
                .enumerate()
            {
                note(&d_i);
                // switch: action at step i from pi~, from step i+1 on pi*_e
                let mut d = d_i;
                for _ in i..horizon {
                    d = transition_apply(mdp, &opt.pi_star, &d);
                    note(&d);
                }
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    let mut report = ConcentrabilityReport {
        coefficient: f64::NEG_INFINITY,
        witness_policy: None,
        witness_index: 0,
        witness_ratio: f64::NEG_INFINITY,
        horizon_used: horizon,
        policy_count: policies.len(),
        all_policies: false,
    };
    for (k, (r, at)) in per_policy.into_iter().enumerate() {
        if r > report.coefficient {
            report.coefficient = r;
            report.witness_ratio = r;
            report.witness_index = at;
            report.witness_policy = Some(policy_snapshot(&policies[k]));
        }
    }
    Ok(report)
}

fn policy_snapshot<P: StepPolicy + ?Sized>(p: &P) -> NonStationaryPolicy {
    let prefix = (0..p.horizon()).map(|t| p.at_step(t).clone()).collect();
    NonStationaryPolicy::new(prefix, p.tail().clone()).expect("policy steps share dimensions")
}

/// `<mu, Q*(., pi) - Q*(., pi*_e)>`, the advantage of `pi` under `mu`.
pub fn advantage_inner(q_star: &QFunction, mu: &[f64], pi: &Policy, pi_star: &Policy) -> f64 {
    let a = q_star.under_policy(pi);
    let b = q_star.under_policy(pi_star);
    mu.iter()
        .zip(a.iter().zip(&b))
        .map(|(m, (x, y))| m * (x - y))
        .sum()
}

/// One link of the prefix-switch chain `pi^_i` (follow `pi^` for steps `0..=i`, then `pi*_e`).
#[derive(Clone, Debug, Serialize)]
pub struct ChainStep {
    pub i: usize,
    pub gap: f64,
    /// `(1 - gamma)(J_{pi^_i} - J*)`.
    pub telescoping_lhs: f64,
    /// `<mu^{0:i}_{pi^_i}, Q*(., pi^) - Q*(., pi*_e)>`.
    pub telescoping_rhs: f64,
    pub within_bound: bool,
}

#[derive(Clone, Debug)]
pub struct AdvantageReport {
    pub inner: f64,
    pub gap: f64,
    /// `C_c eps / (1 - gamma)`.
    pub bound: f64,
    pub holds: bool,
    /// `C_c` is finite, so the lemma applies.
    pub covered: bool,
    pub chain: Vec<ChainStep>,
}

impl AdvantageReport {
    /// A genuine counterexample: the lemma applies and its conclusion fails.
    pub fn violated(&self) -> bool {
        self.covered && !(self.holds && self.chain.iter().all(|c| c.within_bound))
    }
}

/// Telescoping sides for `pi^_i`: `(1-gamma)(J_{pi^_i} - J*)` and the truncated advantage.
pub fn telescoping_identity(
    mdp: &TabularMDP,
    opt: &OptimalSolution,
    pi_hat: &Policy,
    i: usize,
) -> Result<(f64, f64)> {
    let switched = NonStationaryPolicy::switched(pi_hat, i, &opt.pi_star);
    let lhs = (1.0 - mdp.gamma()) * (expected_return(mdp, &switched)? - opt.j_star);
    let mu =
        truncated_occupancy(mdp, &switched, &Start::initial(mdp), 0, Some(i))?.state_marginal();
    Ok((lhs, advantage_inner(&opt.q_star, &mu, pi_hat, &opt.pi_star)))
}

/// Checks `<mu_c, Q*(., pi^) - V*> >= -eps => J* - J_pi^ <= C_c eps / (1 - gamma)`
/// and replays it along the chain `pi^_0, ..., pi^_H`.
pub fn verify_advantage_to_suboptimality(
    mdp: &TabularMDP,
    opt: &OptimalSolution,
    mu_c: &StateDistribution,
    pi_hat: &Policy,
    eps_adv: f64,
    c_c: f64,
    horizon: usize,
) -> Result<AdvantageReport> {
    let inner = advantage_inner(&opt.q_star, mu_c.weights(), pi_hat, &opt.pi_star);
    if inner < -eps_adv - PREMISE_TOL {
        return Err(Error::PremiseViolated {
            inner,
            eps: eps_adv,
        });
    }
    let tol = slack(mdp);
    let bound = if eps_adv == 0.0 {
        0.0
    } else {
        c_c * eps_adv / (1.0 - mdp.gamma())
    };
    // a zero premise still leaves round-off in the returns
    let gap = opt.j_star - expected_return(mdp, pi_hat)?;
    let holds = gap <= bound + 1e-6_f64.max(tol);
    let chain = (0..=horizon)
        .map(|i| {
            let switched = NonStationaryPolicy::switched(pi_hat, i, &opt.pi_star);
            let gap_i = opt.j_star - expected_return(mdp, &switched)?;
            let (lhs, rhs) = telescoping_identity(mdp, opt, pi_hat, i)?;
            Ok(ChainStep {
                i,
                gap: gap_i,
                telescoping_lhs: lhs,
                telescoping_rhs: rhs,
                within_bound: gap_i <= bound + 1e-6_f64.max(tol),
            })
        })
        .collect::<Result<_>>()?;
    Ok(AdvantageReport {
        inner,
        gap,
        bound,
        holds,
        covered: c_c.is_finite(),
        chain,
    })
}

/// `J_pi^{0:i} = sum_{t <= i} gamma^t E[r_t]`.
pub fn partial_return<P: StepPolicy + ?Sized>(
    mdp: &TabularMDP,
    policy: &P,
    i: usize,
) -> Result<f64> {
    let r = mdp.reward_table();
    let mut discount = 1.0;
    let mut total = 0.0;
    for d in StepDistributions::new(mdp, policy, &Start::initial(mdp))?.take(i + 1) {
        total += discount * dot(&d, r.values());
        discount *= mdp.gamma();
    }
    Ok(total)
}

/// `||q^ - Q*||_{d_c, 2}` and whether it is at most `2 sqrt(eps_stat)`.
pub fn verify_q_error(
    d_c: &SaDistribution,
    q_hat: &QFunction,
    q_star: &QFunction,
    eps_stat: f64,
) -> (f64, bool) {
    let norm = weighted_l2(d_c, q_hat, q_star);
    (norm, norm <= 2.0 * eps_stat.sqrt())
}

/// Both sides of `<mu_c, Q*(., pi*_e) - Q*(., pi^)> <= 2 U_B ||q^ - Q*||_{d_c, 1}`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct L1AdvantageCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn verify_l1_advantage(
    opt: &OptimalSolution,
    d_c: &SaDistribution,
    mu_c: &StateDistribution,
    q_hat: &QFunction,
    pi_hat: &Policy,
    u_b: f64,
) -> L1AdvantageCheck {
    let lhs = -advantage_inner(&opt.q_star, mu_c.weights(), pi_hat, &opt.pi_star);
    let rhs = 2.0 * u_b * weighted_l1(d_c, q_hat, &opt.q_star);
    L1AdvantageCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-9,
    }
}

/// Both sides of the loss-difference inequality
/// `L(d, q, w) - L(d, Q*, w) >= 0.5 <d, q^2 - Q*^2> + <(gamma P_{pi*_e} - I)(d^D o w), q - Q*>`.
pub fn loss_difference_sides(
    mdp: &TabularMDP,
    opt: &OptimalSolution,
    d: &SaDistribution,
    d_data: &SaDistribution,
    q: &QFunction,
    w: &SaTable,
) -> Result<(f64, f64)> {
    let lhs = crate::solver::population_loss(mdp, d, d_data, q, w)?
        - crate::solver::population_loss(mdp, d, d_data, &opt.q_star, w)?;
    let dw: Vec<f64> = d_data
        .weights()
        .iter()
        .zip(w.values())
        .map(|(p, x)| p * x)
        .collect();
    let pushed = transition_apply(mdp, &opt.pi_star, &dw);
    let flow: Vec<f64> = pushed
        .iter()
        .zip(&dw)
        .map(|(p, x)| mdp.gamma() * p - x)
        .collect();
    let diff: Vec<f64> = q
        .values()
        .iter()
        .zip(opt.q_star.values())
        .map(|(a, b)| a - b)
        .collect();
    let quad: f64 = d
        .weights()
        .iter()
        .zip(q.values().iter().zip(opt.q_star.values()))
        .map(|(p, (a, b))| p * (a * a - b * b))
        .sum();
    Ok((lhs, 0.5 * quad + dot(&flow, &diff)))
}

/// Normalized state occupancy, re-exported here for report building.
pub fn policy_state_occupancy<P: StepPolicy + ?Sized>(
    mdp: &TabularMDP,
    policy: &P,
) -> Result<Vec<f64>> {
    state_occupancy(mdp, policy)
}

/// One CSV row per enumerated policy.
pub fn write_policy_csv<W: Write>(
    mu_c: &StateDistribution,
    policies: &[NearOptimalPolicy],
    out: W,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record([
        "index",
        "prefix",
        "tail",
        "return",
        "sup_ratio",
        "witness_state",
    ])?;
    for (k, p) in policies.iter().enumerate() {
        let (ratio, at) = sup_ratio_at(&p.state_occupancy, mu_c.weights());
        let prefix: Vec<String> = p
            .policy
            .prefix()
            .iter()
            .map(|pi| format!("{:?}", pi.as_deterministic().unwrap_or_default()))
            .collect();
        wtr.write_record([
            k.to_string(),
            prefix.join(";"),
            format!(
                "{:?}",
                p.policy.tail().as_deterministic().unwrap_or_default()
            ),
            p.ret.to_string(),
            ratio.to_string(),
            at.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// One CSV row per chain link.
pub fn write_chain_csv<W: Write>(report: &AdvantageReport, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for step in &report.chain {
        wtr.serialize(step)?;
    }
    wtr.flush()?;
    Ok(())
}
