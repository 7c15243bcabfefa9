//! The learner: minimax losses over finite classes, the `argmin max` value
//! estimate, policy-ratio extraction and the finite-sample bound.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::function_classes::{ratio_normalizer, FiniteFunctionClass};
use crate::linalg::dot;
use crate::mdp::{Policy, QFunction, SaTable, TabularMDP, TIE_TOL};
use crate::occupancy::{SaDistribution, StateDistribution};

fn check_dims(what: &str, expected: (usize, usize), got: (usize, usize)) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch(format!(
            "{what}: expected {expected:?}, got {got:?}"
        )));
    }
    Ok(())
}

/// `0.5 E_d[q^2]`, exact from the known distribution.
fn quadratic_term(d: &SaDistribution, q: &QFunction) -> f64 {
    0.5 * d
        .weights()
        .iter()
        .zip(q.values())
        .map(|(p, x)| p * x * x)
        .sum::<f64>()
}

/// `L^(d, q, w) = 0.5 E_d[q^2] + (1/N) sum_i w(s_i,a_i) (gamma max q(s'_i, .) + r_i - q(s_i,a_i))`,
/// summed tuple by tuple.
pub fn empirical_loss(
    ds: &Dataset,
    gamma: f64,
    d_c: &SaDistribution,
    q: &QFunction,
    w: &SaTable,
) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dims = (d_c.n_states(), d_c.n_actions());
    check_dims("q", dims, q.dims())?;
    check_dims("w", dims, w.dims())?;
    let v = q.max_over_actions();
    let sum: f64 = ds
        .tuples
        .iter()
        .map(|t| w.get(t.s, t.a) * (gamma * v[t.s_next] + t.r - q.get(t.s, t.a)))
        .sum();
    Ok(quadratic_term(d_c, q) + sum / ds.len() as f64)
}

/// `L(d, q, w) = 0.5 E_d[q^2] + E_{d^D o w}[gamma max q(s', .) + r - q(s, a)]`.
pub fn population_loss(
    mdp: &TabularMDP,
    d_c: &SaDistribution,
    d_data: &SaDistribution,
    q: &QFunction,
    w: &SaTable,
) -> Result<f64> {
    let dims = (mdp.n_states(), mdp.n_actions());
    check_dims("d_c", dims, (d_c.n_states(), d_c.n_actions()))?;
    check_dims("d_data", dims, (d_data.n_states(), d_data.n_actions()))?;
    check_dims("q", dims, q.dims())?;
    check_dims("w", dims, w.dims())?;
    let next = mdp.expected_next(&q.max_over_actions());
    let mut residual = 0.0;
    for s in 0..dims.0 {
        for a in 0..dims.1 {
            let dw = d_data.get(s, a) * w.get(s, a);
            if dw != 0.0 {
                residual += dw * (mdp.gamma() * next.get(s, a) + mdp.reward(s, a) - q.get(s, a));
            }
        }
    }
    Ok(quadratic_term(d_c, q) + residual)
}

/// Sufficient statistics of a dataset for the loss: `n(s, a, s')` and reward sums.
#[derive(Clone, Debug)]
pub struct TupleCounts {
    n_states: usize,
    n_actions: usize,
    n: usize,
    transitions: Vec<f64>,
    pairs: Vec<f64>,
    reward_sums: Vec<f64>,
}

impl TupleCounts {
    pub fn new(ds: &Dataset) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (ns, na) = (ds.meta.n_states, ds.meta.n_actions);
        let mut c = Self {
            n_states: ns,
            n_actions: na,
            n: ds.len(),
            transitions: vec![0.0; ns * na * ns],
            pairs: vec![0.0; ns * na],
            reward_sums: vec![0.0; ns * na],
        };
        for t in &ds.tuples {
            if t.s >= ns || t.a >= na || t.s_next >= ns {
                return Err(Error::Parse(
                    "tuple indexes outside the dataset dimensions".into(),
                ));
            }
            let i = t.s * na + t.a;
            c.pairs[i] += 1.0;
            c.reward_sums[i] += t.r;
            c.transitions[i * ns + t.s_next] += 1.0;
        }
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Same value as [`empirical_loss`], grouped by `(s, a, s')`.
    pub fn loss(&self, gamma: f64, d_c: &SaDistribution, q: &QFunction, w: &SaTable) -> f64 {
        let (ns, na) = (self.n_states, self.n_actions);
        let v = q.max_over_actions();
        let mut sum = 0.0;
        for i in 0..ns * na {
            if self.pairs[i] == 0.0 {
                continue;
            }
            let next = dot(&self.transitions[i * ns..(i + 1) * ns], &v);
            let (s, a) = (i / na, i % na);
            sum += w.get(s, a) * (gamma * next + self.reward_sums[i] - self.pairs[i] * q.get(s, a));
        }
        quadratic_term(d_c, q) + sum / self.n as f64
    }
}

/// `L^(d_c, q, w)` for every `(q, w)` in `Q x W`; rows follow `Q`, columns follow `W`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTable {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl LossTable {
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> Self {
        let values = (0..rows)
            .into_par_iter()
            .flat_map_iter(|i| (0..cols).map(move |j| (i, j)).collect::<Vec<_>>())
            .map(|(i, j)| f(i, j))
            .collect();
        Self { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    /// `max_j L(i, j)` and the first column attaining it.
    pub fn row_max(&self, i: usize) -> (f64, usize) {
        self.row(i)
            .iter()
            .enumerate()
            .fold((f64::NEG_INFINITY, 0), |best, (j, &x)| {
                if x > best.0 {
                    (x, j)
                } else {
                    best
                }
            })
    }

    /// `argmin_i max_j L(i, j)` with ties to the lowest row; returns `(row, column of its max, value)`.
    pub fn minimax(&self) -> (usize, usize, f64) {
        let mut best = (0, 0, f64::INFINITY);
        for i in 0..self.rows {
            let (m, j) = self.row_max(i);
            if m < best.2 {
                best = (i, j, m);
            }
        }
        best
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["q_index".to_string()];
        header.extend((0..self.cols).map(|j| format!("w{j}")));
        wtr.write_record(&header)?;
        for i in 0..self.rows {
            let mut rec = vec![i.to_string()];
            rec.extend(self.row(i).iter().map(|x| x.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn check_class_pair(
    q_class: &FiniteFunctionClass,
    w_class: &FiniteFunctionClass,
    dims: (usize, usize),
) -> Result<()> {
    if q_class.is_empty() || w_class.is_empty() {
        return Err(Error::InvalidParameter(
            "function classes must be non-empty".into(),
        ));
    }
    check_dims("Q class", dims, q_class.member(0).dims())?;
    check_dims("W class", dims, w_class.member(0).dims())
}

/// The empirical loss table over `Q x W`.
pub fn empirical_loss_table(
    ds: &Dataset,
    gamma: f64,
    d_c: &SaDistribution,
    q_class: &FiniteFunctionClass,
    w_class: &FiniteFunctionClass,
) -> Result<LossTable> {
    check_class_pair(q_class, w_class, (d_c.n_states(), d_c.n_actions()))?;
    let counts = TupleCounts::new(ds)?;
    Ok(LossTable::from_fn(q_class.len(), w_class.len(), |i, j| {
        counts.loss(gamma, d_c, q_class.member(i), w_class.member(j))
    }))
}

/// The population loss table over `Q x W`.
pub fn population_loss_table(
    mdp: &TabularMDP,
    d_c: &SaDistribution,
    d_data: &SaDistribution,
    q_class: &FiniteFunctionClass,
    w_class: &FiniteFunctionClass,
) -> Result<LossTable> {
    check_class_pair(q_class, w_class, (mdp.n_states(), mdp.n_actions()))?;
    // validate once so the parallel cells cannot fail
    population_loss(mdp, d_c, d_data, q_class.member(0), w_class.member(0))?;
    Ok(LossTable::from_fn(q_class.len(), w_class.len(), |i, j| {
        population_loss(mdp, d_c, d_data, q_class.member(i), w_class.member(j))
            .expect("dimensions checked")
    }))
}

/// `sup_{q, w} |L^ - L|` with the attaining cell.
pub fn sup_loss_deviation(empirical: &LossTable, population: &LossTable) -> (f64, usize, usize) {
    let mut best = (0.0, 0, 0);
    for i in 0..empirical.rows() {
        for j in 0..empirical.cols() {
            let d = (empirical.get(i, j) - population.get(i, j)).abs();
            if d > best.0 {
                best = (d, i, j);
            }
        }
    }
    best
}

/// `q^ = argmin_q max_w L^(d_c, q, w)`; returns the member index and the full table.
pub fn solve_q(
    ds: &Dataset,
    gamma: f64,
    d_c: &SaDistribution,
    q_class: &FiniteFunctionClass,
    w_class: &FiniteFunctionClass,
) -> Result<(usize, LossTable)> {
    let table = empirical_loss_table(ds, gamma, d_c, q_class, w_class)?;
    Ok((table.minimax().0, table))
}

/// `pi_beta(a|s) = pi_c(a|s) beta(s,a) / sum_a pi_c(a|s) beta(s,a)`, falling back to
/// `pi_c` at states where the normalizer vanishes.
pub fn policy_from_ratio(beta: &SaTable, pi_c: &Policy) -> Result<Policy> {
    check_dims("beta", (pi_c.n_states(), pi_c.n_actions()), beta.dims())?;
    let (ns, na) = beta.dims();
    let z: Vec<f64> = (0..ns).map(|s| ratio_normalizer(beta, pi_c, s)).collect();
    Policy::new(SaTable::from_fn(ns, na, |s, a| {
        if z[s] > 0.0 {
            pi_c.prob(s, a) * beta.get(s, a) / z[s]
        } else {
            pi_c.prob(s, a)
        }
    }))
}

/// `E_{mu_c}[q(s, pi)]`.
pub fn state_value_under(q: &QFunction, mu: &StateDistribution, policy: &Policy) -> f64 {
    dot(mu.weights(), &q.under_policy(policy))
}

/// `beta^ = argmax_beta E_{mu_c}[q^(s, pi_beta)]`, ties within a relative
/// `TIE_TOL` going to the lowest index. Returns `(index, pi_beta^, objective)`.
pub fn extract_policy(
    q_hat: &QFunction,
    mu_c: &StateDistribution,
    pi_c: &Policy,
    b_class: &FiniteFunctionClass,
) -> Result<(usize, Policy, f64)> {
    if b_class.is_empty() {
        return Err(Error::InvalidParameter(
            "policy ratio class is empty".into(),
        ));
    }
    if mu_c.len() != q_hat.n_states() {
        return Err(Error::DimensionMismatch("mu_c vs q".into()));
    }
    let candidates: Vec<(Policy, f64)> = b_class
        .members()
        .iter()
        .map(|beta| {
            let pi = policy_from_ratio(beta, pi_c)?;
            let obj = state_value_under(q_hat, mu_c, &pi);
            Ok((pi, obj))
        })
        .collect::<Result<_>>()?;
    let best = candidates
        .iter()
        .map(|(_, o)| *o)
        .fold(f64::NEG_INFINITY, f64::max);
    let slack = TIE_TOL * best.abs().max(1.0);
    let index = candidates
        .iter()
        .position(|(_, o)| *o >= best - slack)
        .expect("non-empty class");
    let (pi, obj) = candidates.into_iter().nth(index).expect("index in range");
    Ok((index, pi, obj))
}

/// `eps_stat = U_W V_max sqrt(2 log(2 |Q| |W| / delta) / N)`.
pub fn epsilon_stat(
    u_w: f64,
    v_max: f64,
    size_q: usize,
    size_w: usize,
    delta: f64,
    n: usize,
) -> Result<f64> {
    if !(u_w >= 0.0 && u_w.is_finite() && v_max >= 0.0 && v_max.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "U_W = {u_w}, V_max = {v_max} must be finite and non-negative"
        )));
    }
    if size_q == 0 || size_w == 0 || n == 0 {
        return Err(Error::InvalidParameter(
            "class sizes and N must be positive".into(),
        ));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "delta = {delta} must lie in (0, 1)"
        )));
    }
    let log_term = (2.0 * size_q as f64 * size_w as f64 / delta).ln();
    Ok(u_w * v_max * (2.0 * log_term / n as f64).sqrt())
}

/// `4 C_c U_B sqrt(eps_stat) / (1 - gamma)`; an infinite `C_c` gives `+inf`
/// unless `eps_stat = 0`.
pub fn suboptimality_bound(c_c: f64, u_b: f64, eps_stat: f64, gamma: f64) -> Result<f64> {
    if !(c_c >= 0.0 && u_b >= 0.0 && eps_stat >= 0.0) || u_b.is_infinite() || eps_stat.is_infinite()
    {
        return Err(Error::InvalidParameter(format!(
            "C_c = {c_c}, U_B = {u_b}, eps_stat = {eps_stat} must be non-negative"
        )));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma = {gamma} must lie in (0, 1)"
        )));
    }
    if eps_stat == 0.0 || u_b == 0.0 {
        return Ok(0.0);
    }
    Ok(4.0 * c_c * u_b * eps_stat.sqrt() / (1.0 - gamma))
}

/// `||a - b||_{d, 2}`.
pub fn weighted_l2(d: &SaDistribution, a: &SaTable, b: &SaTable) -> f64 {
    d.weights()
        .iter()
        .zip(a.values().iter().zip(b.values()))
        .map(|(p, (x, y))| p * (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `||a - b||_{d, 1}`.
pub fn weighted_l1(d: &SaDistribution, a: &SaTable, b: &SaTable) -> f64 {
    d.weights()
        .iter()
        .zip(a.values().iter().zip(b.values()))
        .map(|(p, (x, y))| p * (x - y).abs())
        .sum()
}

/// Everything the learner needs besides the data.
#[derive(Clone, Copy, Debug)]
pub struct SolveInputs<'a> {
    pub gamma: f64,
    pub v_max: f64,
    pub d_c: &'a SaDistribution,
    pub mu_c: &'a StateDistribution,
    pub pi_c: &'a Policy,
    pub q_class: &'a FiniteFunctionClass,
    pub w_class: &'a FiniteFunctionClass,
    pub b_class: &'a FiniteFunctionClass,
    pub delta: f64,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub q_hat: QFunction,
    pub beta_hat: SaTable,
    pub pi_hat: Policy,
    pub loss_table: LossTable,
    pub q_index: usize,
    /// Column attaining the max in row `q_index`.
    pub w_index: usize,
    pub minimax_value: f64,
    pub beta_index: usize,
    pub beta_objective: f64,
    pub epsilon_stat: f64,
    pub u_w: f64,
    pub u_b: f64,
    pub n: usize,
}

#[derive(Serialize)]
struct ReportSummary<'a> {
    n: usize,
    q_index: usize,
    w_index: usize,
    minimax_value: f64,
    beta_index: usize,
    beta_objective: f64,
    epsilon_stat: f64,
    u_w: f64,
    u_b: f64,
    q_hat: &'a [f64],
    beta_hat: &'a [f64],
    pi_hat: &'a [f64],
}

impl SolveReport {
    /// `4 C_c U_B sqrt(eps_stat) / (1 - gamma)` for a given `C_c`.
    pub fn bound(&self, c_c: f64, gamma: f64) -> Result<f64> {
        suboptimality_bound(c_c, self.u_b, self.epsilon_stat, gamma)
    }

    /// Human-readable TOML summary; tables are flattened s-major.
    pub fn to_text(&self) -> Result<String> {
        toml::to_string(&ReportSummary {
            n: self.n,
            q_index: self.q_index,
            w_index: self.w_index,
            minimax_value: self.minimax_value,
            beta_index: self.beta_index,
            beta_objective: self.beta_objective,
            epsilon_stat: self.epsilon_stat,
            u_w: self.u_w,
            u_b: self.u_b,
            q_hat: self.q_hat.values(),
            beta_hat: self.beta_hat.values(),
            pi_hat: self.pi_hat.table().values(),
        })
        .map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::write(dir.join("solve_report.toml"), self.to_text()?)?;
        self.loss_table
            .write_csv(std::fs::File::create(dir.join("loss_table.csv"))?)
    }
}

/// Both steps of the learner: the minimax value estimate, then the policy-ratio argmax.
pub fn vopr(ds: &Dataset, inputs: &SolveInputs<'_>) -> Result<SolveReport> {
    let (q_index, loss_table) =
        solve_q(ds, inputs.gamma, inputs.d_c, inputs.q_class, inputs.w_class)?;
    let (_, w_index, minimax_value) = loss_table.minimax();
    let q_hat = inputs.q_class.member(q_index).clone();
    let (beta_index, pi_hat, beta_objective) =
        extract_policy(&q_hat, inputs.mu_c, inputs.pi_c, inputs.b_class)?;
    let u_w = inputs.w_class.bound();
    let eps = epsilon_stat(
        u_w,
        inputs.v_max,
        inputs.q_class.len(),
        inputs.w_class.len(),
        inputs.delta,
        ds.len(),
    )?;
    Ok(SolveReport {
        q_hat,
        beta_hat: inputs.b_class.member(beta_index).clone(),
        pi_hat,
        loss_table,
        q_index,
        w_index,
        minimax_value,
        beta_index,
        beta_objective,
        epsilon_stat: eps,
        u_w,
        u_b: inputs.b_class.bound(),
        n: ds.len(),
    })
}
