//! State-action transition operator `P_pi`, its adjoint, discounted occupancy
//! measures and density ratios.
//!
//! `P_pi d(s', a') = pi(a'|s') sum_{s,a} P(s'|s,a) d(s,a)` moves a density one
//! step forward; the adjoint `P_pi^* q(s,a) = sum_{s',a'} q(s',a') pi(a'|s') P(s'|s,a)`
//! moves a function one step backward, so `<q, P_pi d> = <P_pi^* q, d>`.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::linalg::{snap_roundoff, solve_dense};
use crate::mdp::{check_distribution, Policy, QFunction, SaTable, StepPolicy, TabularMDP};

/// Normalization tolerance for distributions.
pub const DIST_TOL: f64 = 1e-10;

/// A probability vector over states.
#[derive(Clone, Debug, PartialEq)]
pub struct StateDistribution(Vec<f64>);

impl StateDistribution {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        check_distribution(&weights, DIST_TOL, "state distribution")?;
        Ok(Self(weights))
    }

    pub fn uniform(n_states: usize) -> Self {
        Self(vec![1.0 / n_states as f64; n_states])
    }

    pub fn point(n_states: usize, s: usize) -> Self {
        let mut w = vec![0.0; n_states];
        w[s] = 1.0;
        Self(w)
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A probability vector over `S x A` pairs, s-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SaDistribution {
    n_states: usize,
    n_actions: usize,
    weights: Vec<f64>,
}

impl SaDistribution {
    pub fn new(n_states: usize, n_actions: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {n_states} x {n_actions} pairs",
                weights.len()
            )));
        }
        check_distribution(&weights, DIST_TOL, "state-action distribution")?;
        Ok(Self {
            n_states,
            n_actions,
            weights,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let n = n_states * n_actions;
        Self {
            n_states,
            n_actions,
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn point(n_states: usize, n_actions: usize, s: usize, a: usize) -> Self {
        let mut weights = vec![0.0; n_states * n_actions];
        weights[s * n_actions + a] = 1.0;
        Self {
            n_states,
            n_actions,
            weights,
        }
    }

    /// `(mu x pi)(s, a) = mu(s) pi(a|s)`.
    pub fn compose(mu: &StateDistribution, pi: &Policy) -> Result<Self> {
        if mu.len() != pi.n_states() {
            return Err(Error::DimensionMismatch(format!(
                "distribution over {} states, policy over {}",
                mu.len(),
                pi.n_states()
            )));
        }
        let table = SaTable::from_fn(pi.n_states(), pi.n_actions(), |s, a| {
            mu.weights()[s] * pi.prob(s, a)
        });
        Ok(Self {
            n_states: pi.n_states(),
            n_actions: pi.n_actions(),
            weights: table.into_values(),
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.weights[s * self.n_actions + a]
    }

    pub fn state_marginal(&self) -> Vec<f64> {
        state_marginal(&self.weights, self.n_actions)
    }

    /// Splits `d = mu x pi`. States without mass get the uniform action rule.
    pub fn decompose(&self) -> (StateDistribution, Policy) {
        let mu = self.state_marginal();
        let probs = SaTable::from_fn(self.n_states, self.n_actions, |s, a| {
            if mu[s] > 0.0 {
                self.get(s, a) / mu[s]
            } else {
                1.0 / self.n_actions as f64
            }
        });
        // Row sums are 1 up to a few ulps; renormalize to keep Policy's 1e-12 check happy.
        let probs = SaTable::from_fn(self.n_states, self.n_actions, |s, a| {
            let z: f64 = probs.row(s).iter().sum();
            probs.get(s, a) / z
        });
        let mu_sum: f64 = mu.iter().sum();
        let mu = StateDistribution(mu.into_iter().map(|m| m / mu_sum).collect());
        (
            mu,
            Policy::new(probs).expect("conditional rows are normalized"),
        )
    }

    pub fn as_table(&self) -> SaTable {
        SaTable::from_vec(self.n_states, self.n_actions, self.weights.clone())
            .expect("dimensions match")
    }

    /// CSV with header `s,a,weight`, rows in s-major order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["s", "a", "weight"])?;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                w.write_record([s.to_string(), a.to_string(), self.get(s, a).to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut rows: Vec<(usize, usize, f64)> = Vec::new();
        for rec in r.deserialize() {
            rows.push(rec?);
        }
        let n_states = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let n_actions = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        if rows.len() != n_states * n_actions {
            return Err(Error::Parse("state-action CSV is not a full grid".into()));
        }
        let mut weights = vec![0.0; n_states * n_actions];
        for (s, a, x) in rows {
            weights[s * n_actions + a] = x;
        }
        Self::new(n_states, n_actions, weights)
    }
}

impl StateDistribution {
    /// CSV with header `s,weight`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["s", "weight"])?;
        for (s, x) in self.0.iter().enumerate() {
            w.write_record([s.to_string(), x.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut rows: Vec<(usize, f64)> = Vec::new();
        for rec in r.deserialize() {
            rows.push(rec?);
        }
        rows.sort_by_key(|r| r.0);
        if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
            return Err(Error::Parse("state CSV indices are not 0..n".into()));
        }
        Self::new(rows.into_iter().map(|r| r.1).collect())
    }
}

/// An unnormalized nonnegative measure over `S x A` (e.g. a truncated occupancy).
#[derive(Clone, Debug, PartialEq)]
pub struct SaMeasure {
    n_states: usize,
    n_actions: usize,
    weights: Vec<f64>,
}

impl SaMeasure {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn state_marginal(&self) -> Vec<f64> {
        state_marginal(&self.weights, self.n_actions)
    }

    fn add_scaled(&mut self, x: &[f64], c: f64) {
        for (w, v) in self.weights.iter_mut().zip(x) {
            *w += c * v;
        }
    }
}

fn state_marginal(w: &[f64], n_actions: usize) -> Vec<f64> {
    w.chunks(n_actions).map(|row| row.iter().sum()).collect()
}

/// Where a rollout starts: a state distribution composed with the step-0
/// action rule, or an explicit state-action distribution.
#[derive(Clone, Debug, PartialEq)]
pub enum Start {
    States(StateDistribution),
    Pairs(SaDistribution),
}

impl Start {
    /// The MDP's own initial distribution `mu_0`.
    pub fn initial(mdp: &TabularMDP) -> Self {
        Start::States(StateDistribution(mdp.initial_dist().to_vec()))
    }

    fn pairs(&self, step0: &Policy) -> Result<Vec<f64>> {
        match self {
            Start::States(mu) => Ok(SaDistribution::compose(mu, step0)?.weights),
            Start::Pairs(d) => Ok(d.weights.clone()),
        }
    }
}

impl From<StateDistribution> for Start {
    fn from(mu: StateDistribution) -> Self {
        Start::States(mu)
    }
}

impl From<SaDistribution> for Start {
    fn from(d: SaDistribution) -> Self {
        Start::Pairs(d)
    }
}

/// Raw `P_pi x` for any vector over pairs (linear, not necessarily a distribution).
pub fn transition_apply(mdp: &TabularMDP, policy: &Policy, x: &[f64]) -> Vec<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut mass = vec![0.0; ns];
    for s in 0..ns {
        for a in 0..na {
            let w = x[s * na + a];
            if w == 0.0 {
                continue;
            }
            for (next, p) in mdp.next_dist(s, a).iter().enumerate() {
                mass[next] += w * p;
            }
        }
    }
    let mut out = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            out[s * na + a] = policy.prob(s, a) * mass[s];
        }
    }
    out
}

/// Raw `P_pi^* q` for any vector over pairs.
pub fn adjoint_apply(mdp: &TabularMDP, policy: &Policy, q: &[f64]) -> Vec<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let v: Vec<f64> = (0..ns)
        .map(|s| (0..na).map(|a| q[s * na + a] * policy.prob(s, a)).sum())
        .collect();
    mdp.expected_next(&v).into_values()
}

/// `P_pi d`: start from `(s, a) ~ d`, step to `s' ~ P(.|s,a)`, act with `a' ~ pi(.|s')`.
pub fn apply_transition(mdp: &TabularMDP, policy: &Policy, d: &SaDistribution) -> SaDistribution {
    SaDistribution {
        n_states: mdp.n_states(),
        n_actions: mdp.n_actions(),
        weights: transition_apply(mdp, policy, &d.weights),
    }
}

/// `P_pi^* q`.
pub fn apply_adjoint(mdp: &TabularMDP, policy: &Policy, q: &QFunction) -> QFunction {
    SaTable::from_vec(
        mdp.n_states(),
        mdp.n_actions(),
        adjoint_apply(mdp, policy, q.values()),
    )
    .expect("dimensions match")
}

/// Dense `P_pi` as a row-major `SA x SA` matrix mapping densities forward.
fn transition_matrix(mdp: &TabularMDP, policy: &Policy) -> Vec<f64> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let n = ns * na;
    let mut m = vec![0.0; n * n];
    for s in 0..ns {
        for a in 0..na {
            let col = s * na + a;
            for (next, p) in mdp.next_dist(s, a).iter().enumerate() {
                if *p == 0.0 {
                    continue;
                }
                for next_a in 0..na {
                    m[(next * na + next_a) * n + col] += p * policy.prob(next, next_a);
                }
            }
        }
    }
    m
}

/// Solves `(I - gamma P_pi) x = rhs` directly.
pub fn resolvent_apply(mdp: &TabularMDP, policy: &Policy, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = mdp.n_pairs();
    let mut a = transition_matrix(mdp, policy);
    for (i, x) in a.iter_mut().enumerate() {
        *x *= -mdp.gamma();
        if i / n == i % n {
            *x += 1.0;
        }
    }
    let scale = rhs.iter().map(|x| x.abs()).sum::<f64>().max(1.0);
    solve_dense(n, &a, rhs, 1e-10 * scale)
}

/// Discounted occupancy `d_{d,pi} = (1 - gamma)(I - gamma P_pi)^{-1} d` by direct solve.
pub fn occupancy_measure(
    mdp: &TabularMDP,
    policy: &Policy,
    start: &Start,
) -> Result<SaDistribution> {
    let d0 = start.pairs(policy)?;
    let rhs: Vec<f64> = d0.iter().map(|x| (1.0 - mdp.gamma()) * x).collect();
    let mut x = resolvent_apply(mdp, policy, &rhs)?;
    snap_roundoff(&mut x);
    for v in x.iter_mut() {
        *v = v.max(0.0);
    }
    SaDistribution::new(mdp.n_states(), mdp.n_actions(), x)
}

/// Truncated Neumann series `(1 - gamma) sum_{i=0}^{terms} (gamma P_pi)^i d`.
/// Kept as an independent cross-check of [`occupancy_measure`].
pub fn neumann_occupancy(
    mdp: &TabularMDP,
    policy: &Policy,
    start: &Start,
    terms: usize,
) -> Result<SaMeasure> {
    let mut d = start.pairs(policy)?;
    let mut acc = SaMeasure {
        n_states: mdp.n_states(),
        n_actions: mdp.n_actions(),
        weights: vec![0.0; mdp.n_pairs()],
    };
    let mut coef = 1.0 - mdp.gamma();
    for i in 0..=terms {
        if i > 0 {
            d = transition_apply(mdp, policy, &d);
        }
        acc.add_scaled(&d, coef);
        coef *= mdp.gamma();
    }
    Ok(acc)
}

/// Iterator over the (undiscounted) state-action distribution at each step `t = 0, 1, ...`.
pub struct StepDistributions<'a, P: StepPolicy + ?Sized> {
    mdp: &'a TabularMDP,
    policy: &'a P,
    current: Option<Vec<f64>>,
    t: usize,
}

impl<'a, P: StepPolicy + ?Sized> StepDistributions<'a, P> {
    pub fn new(mdp: &'a TabularMDP, policy: &'a P, start: &Start) -> Result<Self> {
        let d0 = start.pairs(policy.at_step(0))?;
        Ok(Self {
            mdp,
            policy,
            current: Some(d0),
            t: 0,
        })
    }
}

impl<P: StepPolicy + ?Sized> Iterator for StepDistributions<'_, P> {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        let d = self.current.take()?;
        self.t += 1;
        self.current = Some(transition_apply(self.mdp, self.policy.at_step(self.t), &d));
        Some(d)
    }
}

/// The `i`-th to `j`-th step part `(1 - gamma) sum_{t=i}^{j} gamma^t d_t` of the
/// occupancy of a (possibly non-stationary) policy; `to = None` means `j = inf`.
pub fn truncated_occupancy<P: StepPolicy + ?Sized>(
    mdp: &TabularMDP,
    policy: &P,
    start: &Start,
    from: usize,
    to: Option<usize>,
) -> Result<SaMeasure> {
    if let Some(j) = to {
        if j < from {
            return Err(Error::InvalidParameter(format!(
                "step range {from}..={j} is empty"
            )));
        }
    }
    let gamma = mdp.gamma();
    let mut acc = SaMeasure {
        n_states: mdp.n_states(),
        n_actions: mdp.n_actions(),
        weights: vec![0.0; mdp.n_pairs()],
    };
    // Explicit steps up to `last` (exclusive); for an infinite range close with the tail solve.
    let last = match to {
        Some(j) => j + 1,
        None => from.max(policy.horizon()),
    };
    let mut steps = StepDistributions::new(mdp, policy, start)?;
    let mut discount = 1.0;
    for t in 0..last {
        let d = steps.next().expect("step iterator is infinite");
        if t >= from {
            acc.add_scaled(&d, (1.0 - gamma) * discount);
        }
        discount *= gamma;
    }
    if to.is_none() {
        let d_last = steps.next().expect("step iterator is infinite");
        let tail = occupancy_measure(mdp, policy.tail(), &Start::Pairs(raw_pairs(mdp, d_last)))?;
        acc.add_scaled(tail.weights(), discount);
    }
    snap_roundoff(&mut acc.weights);
    Ok(acc)
}

fn raw_pairs(mdp: &TabularMDP, weights: Vec<f64>) -> SaDistribution {
    SaDistribution {
        n_states: mdp.n_states(),
        n_actions: mdp.n_actions(),
        weights,
    }
}

/// Normalized state occupancy `mu_pi` of any step policy from `mu_0`.
pub fn state_occupancy<P: StepPolicy + ?Sized>(mdp: &TabularMDP, policy: &P) -> Result<Vec<f64>> {
    Ok(truncated_occupancy(mdp, policy, &Start::initial(mdp), 0, None)?.state_marginal())
}

/// Elementwise `num / den` with `0/0 = 1` and `x/0 = +inf` for `x > 0`.
pub fn density_ratio(num: &[f64], den: &[f64]) -> Vec<f64> {
    debug_assert_eq!(num.len(), den.len());
    num.iter()
        .zip(den)
        .map(|(&n, &d)| {
            if d > 0.0 {
                n / d
            } else if n > 0.0 {
                f64::INFINITY
            } else {
                1.0
            }
        })
        .collect()
}

/// `||num / den||_inf` and the first index attaining it.
pub fn sup_ratio_at(num: &[f64], den: &[f64]) -> (f64, usize) {
    density_ratio(num, den)
        .into_iter()
        .enumerate()
        .fold((f64::NEG_INFINITY, 0), |best, (i, r)| {
            if r > best.0 {
                (r, i)
            } else {
                best
            }
        })
}

/// `||num / den||_inf`; `+inf` signals a coverage failure.
pub fn sup_ratio(num: &[f64], den: &[f64]) -> f64 {
    sup_ratio_at(num, den).0
}
