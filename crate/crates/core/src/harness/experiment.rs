use std::collections::HashSet;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{BehaviorSpec, CoveringMode, ExperimentConfig, PiCSpec, StateSpec};
use super::{counterexample, random_mdp};
use crate::dataset::{data_distribution, sample_dataset};
use crate::error::{Error, Result};
use crate::function_classes::{build_realizable_classes, optimal_beta, DistractorSpec};
use crate::mdp::{expected_return, solve_optimal, OptimalSolution, Policy, SaTable, TabularMDP};
use crate::occupancy::{sup_ratio, SaDistribution, StateDistribution};
use crate::solver::{population_loss_table, sup_loss_deviation, vopr, SolveInputs};
use crate::theory::{
    advantage_inner, all_policy_concentrability, concentrability_cc, concentrability_cd,
    mixture_covering, near_optimal_policies, verify_l1_advantage, verify_q_error,
    ConcentrabilityReport,
};

/// The covering side information `(d_c, mu_c, pi_c)`.
#[derive(Clone, Debug)]
pub struct Covering {
    pub d_c: SaDistribution,
    pub mu_c: StateDistribution,
    pub pi_c: Policy,
}

/// Everything shared by the rows of one experiment.
#[derive(Clone, Debug)]
pub struct Instance {
    pub mdp: TabularMDP,
    pub opt: OptimalSolution,
    pub mu_data: StateDistribution,
    pub pi_b: Policy,
    pub d_data: SaDistribution,
    pub covering: Covering,
    /// `pi_adv / pi_c`, placed first in the policy-ratio class when set.
    pub adversarial_ratio: Option<SaTable>,
}

/// The lowest-return deterministic stationary policy whose advantage under
/// `mu_c` is zero (within `1e-9`); ties go to the lexicographically first.
pub fn adversarial_policy(
    mdp: &TabularMDP,
    opt: &OptimalSolution,
    mu_c: &StateDistribution,
) -> Result<Policy> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let total = u32::try_from(ns)
        .ok()
        .and_then(|n| na.checked_pow(n))
        .filter(|c| *c <= 1_000_000)
        .ok_or(Error::EnumerationTooLarge { cap: 1_000_000 })?;
    let mut best: Option<(f64, Policy)> = None;
    for code in 0..total {
        let mut actions = vec![0; ns];
        let mut c = code;
        for s in (0..ns).rev() {
            actions[s] = c % na;
            c /= na;
        }
        let pi = Policy::deterministic(&actions, na)?;
        if advantage_inner(&opt.q_star, mu_c.weights(), &pi, &opt.pi_star) < -1e-9 {
            continue;
        }
        let j = expected_return(mdp, &pi)?;
        if best.as_ref().is_none_or(|(bj, _)| j < *bj - 1e-12) {
            best = Some((j, pi));
        }
    }
    Ok(best.expect("pi*_e always qualifies").1)
}

impl Instance {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let spec = &cfg.mdp;
        let mdp = match (&spec.builtin, &spec.file) {
            (_, Some(file)) => TabularMDP::load(file)?,
            (Some(name), None) if name == "counterexample" => {
                counterexample(spec.gamma.expect("validated"))?
            }
            (Some(_), None) => random_mdp(
                spec.n_states,
                spec.n_actions,
                spec.gamma.expect("validated"),
                spec.seed,
                spec.reward_sparsity,
            )?,
            (None, None) => return Err(Error::Config("no MDP given".into())),
        };
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let opt = solve_optimal(&mdp)?;

        let mu_data = match &cfg.data.mu {
            StateSpec::Named(n) if n == "initial" => {
                StateDistribution::new(mdp.initial_dist().to_vec())?
            }
            StateSpec::Named(_) => StateDistribution::uniform(ns),
            StateSpec::Weights(w) => state_weights(w.clone(), ns)?,
        };
        let pi_b = match cfg.data.behavior {
            BehaviorSpec::Uniform => Policy::uniform(ns, na),
            BehaviorSpec::EpsilonGreedy(e) => Policy::new(SaTable::from_fn(ns, na, |s, a| {
                (1.0 - e) * opt.pi_star.prob(s, a) + e / na as f64
            }))?,
        };
        let d_data = data_distribution(&mu_data, &pi_b)?;

        let pi_c_choice = match cfg.covering.pi_c {
            PiCSpec::Behavior => pi_b.clone(),
            PiCSpec::Uniform => Policy::uniform(ns, na),
        };
        let covering = match cfg.covering.mode {
            CoveringMode::Data => Covering {
                d_c: d_data.clone(),
                mu_c: mu_data.clone(),
                pi_c: pi_b.clone(),
            },
            CoveringMode::Uniform => {
                let mu_c = StateDistribution::uniform(ns);
                Covering {
                    d_c: SaDistribution::compose(&mu_c, &pi_c_choice)?,
                    mu_c,
                    pi_c: pi_c_choice,
                }
            }
            CoveringMode::Explicit => {
                let mu_c = state_weights(cfg.covering.mu_c.clone().expect("validated"), ns)?;
                Covering {
                    d_c: SaDistribution::compose(&mu_c, &pi_c_choice)?,
                    mu_c,
                    pi_c: pi_c_choice,
                }
            }
            CoveringMode::Mixture => {
                let policies = near_optimal_policies(
                    &mdp,
                    &opt,
                    cfg.covering.mixture_eps,
                    cfg.covering.mixture_horizon,
                    cfg.run.enumeration_cap,
                )?;
                let members: Vec<_> = policies.into_iter().map(|p| p.policy).collect();
                let weights = vec![1.0 / members.len() as f64; members.len()];
                let d_c = mixture_covering(&mdp, &members, &weights)?;
                let (mu_c, pi_c) = d_c.decompose();
                Covering { d_c, mu_c, pi_c }
            }
        };
        let adversarial_ratio = if cfg.run.adversarial_tie_break {
            let pi_adv = adversarial_policy(&mdp, &opt, &covering.mu_c)?;
            Some(optimal_beta(&pi_adv, &covering.pi_c)?)
        } else {
            None
        };
        Ok(Self {
            mdp,
            opt,
            mu_data,
            pi_b,
            d_data,
            covering,
            adversarial_ratio,
        })
    }
}

fn state_weights(w: Vec<f64>, ns: usize) -> Result<StateDistribution> {
    if w.len() != ns {
        return Err(Error::Config(format!(
            "distribution has {} entries, MDP has {ns} states",
            w.len()
        )));
    }
    StateDistribution::new(w)
}

/// One `(seed, N)` run. Failed rows carry NaN metrics and the error text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub seed: u64,
    pub n: usize,
    pub j_star: f64,
    pub j_hat: f64,
    pub gap: f64,
    pub epsilon_stat: f64,
    pub bound: f64,
    pub bound_ok: bool,
    pub q_error_l2: f64,
    pub q_error_bound: f64,
    pub q_error_ok: bool,
    pub l1_advantage_lhs: f64,
    pub l1_advantage_rhs: f64,
    pub l1_advantage_ok: bool,
    pub advantage: f64,
    pub c_c: f64,
    pub c_c_all_policies: bool,
    pub c_d: f64,
    pub d_c_ratio: f64,
    pub d_c_ratio_ok: bool,
    pub sup_deviation: f64,
    pub deviation_ok: bool,
    pub minimax_gap: f64,
    pub minimax_ok: bool,
    pub u_w: f64,
    pub u_b: f64,
    pub q_index: usize,
    pub q_star_index: usize,
    pub beta_index: usize,
    pub beta_star_index: usize,
    pub error: String,
}

impl ExperimentRow {
    fn failed(seed: u64, n: usize, j_star: f64, e: &Error) -> Self {
        Self {
            seed,
            n,
            j_star,
            j_hat: f64::NAN,
            gap: f64::NAN,
            epsilon_stat: f64::NAN,
            bound: f64::NAN,
            bound_ok: false,
            q_error_l2: f64::NAN,
            q_error_bound: f64::NAN,
            q_error_ok: false,
            l1_advantage_lhs: f64::NAN,
            l1_advantage_rhs: f64::NAN,
            l1_advantage_ok: false,
            advantage: f64::NAN,
            c_c: f64::NAN,
            c_c_all_policies: false,
            c_d: f64::NAN,
            d_c_ratio: f64::NAN,
            d_c_ratio_ok: false,
            sup_deviation: f64::NAN,
            deviation_ok: false,
            minimax_gap: f64::NAN,
            minimax_ok: false,
            u_w: f64::NAN,
            u_b: f64::NAN,
            q_index: 0,
            q_star_index: 0,
            beta_index: 0,
            beta_star_index: 0,
            error: e.to_string(),
        }
    }

    pub fn is_error(&self) -> bool {
        !self.error.is_empty()
    }
}

fn dataset_seed(seed: u64, n: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (n as u64)
}

/// `C_c` at the smallest `eps_c` with `eps_c >= k C_c(eps_c)`, found by
/// iterating `eps <- k C_c(eps)` from 0. An enumeration over the cap falls
/// back to the (larger) all-policy coefficient.
fn self_consistent_cc(
    inst: &Instance,
    cfg: &ExperimentConfig,
    k: f64,
) -> Result<ConcentrabilityReport> {
    let cc = |eps: f64| match concentrability_cc(
        &inst.mdp,
        &inst.opt,
        &inst.covering.mu_c,
        eps,
        cfg.run.horizon,
        cfg.run.enumeration_cap,
    ) {
        Err(Error::EnumerationTooLarge { .. }) => {
            all_policy_concentrability(&inst.mdp, &inst.covering.mu_c)
        }
        other => other,
    };
    let mut report = cc(0.0)?;
    for _ in 0..32 {
        if !report.coefficient.is_finite() || report.all_policies || k == 0.0 {
            break;
        }
        let next = cc(k * report.coefficient)?;
        if next.coefficient <= report.coefficient {
            break;
        }
        report = next;
    }
    Ok(report)
}

fn compute_row(
    inst: &Instance,
    cfg: &ExperimentConfig,
    seed: u64,
    n: usize,
) -> Result<ExperimentRow> {
    let (mdp, opt, cov) = (&inst.mdp, &inst.opt, &inst.covering);
    let spec = DistractorSpec {
        count: cfg.classes.distractors,
        scale: cfg.classes.scale,
    };
    let mut classes =
        build_realizable_classes(mdp, opt, &cov.d_c, &inst.d_data, &cov.pi_c, spec, seed)?;
    if let Some(beta_adv) = &inst.adversarial_ratio {
        classes.b = classes
            .b
            .with_leading_member(beta_adv.clone(), Some(&cov.pi_c))?;
        classes.beta_star_index += 1;
    }
    let ds = sample_dataset(mdp, &inst.mu_data, &inst.pi_b, n, dataset_seed(seed, n))?;
    let report = vopr(
        &ds,
        &SolveInputs {
            gamma: mdp.gamma(),
            v_max: mdp.v_max(),
            d_c: &cov.d_c,
            mu_c: &cov.mu_c,
            pi_c: &cov.pi_c,
            q_class: &classes.q,
            w_class: &classes.w,
            b_class: &classes.b,
            delta: cfg.run.delta,
        },
    )?;
    let j_hat = expected_return(mdp, &report.pi_hat)?;
    let gap = opt.j_star - j_hat;

    let k = 4.0 * report.u_b * report.epsilon_stat.sqrt() / (1.0 - mdp.gamma());
    let cc = self_consistent_cc(inst, cfg, k)?;
    let bound = report.bound(cc.coefficient, mdp.gamma())?;

    let (q_error_l2, q_error_ok) =
        verify_q_error(&cov.d_c, &report.q_hat, &opt.q_star, report.epsilon_stat);
    let l1 = verify_l1_advantage(
        opt,
        &cov.d_c,
        &cov.mu_c,
        &report.q_hat,
        &report.pi_hat,
        report.u_b,
    );
    let cd = concentrability_cd(mdp, opt, &cov.d_c, &inst.d_data)?;
    let d_c_ratio = sup_ratio(cov.d_c.weights(), inst.d_data.weights());
    let d_c_ratio_ok =
        !cd.coefficient.is_finite() || d_c_ratio <= cd.coefficient / (1.0 - mdp.gamma()) + 1e-9;

    let population = population_loss_table(mdp, &cov.d_c, &inst.d_data, &classes.q, &classes.w)?;
    let (sup_deviation, _, _) = sup_loss_deviation(&report.loss_table, &population);
    let minimax_gap = (0..population.cols())
        .map(|j| population.get(report.q_index, j) - population.get(classes.q_star_index, j))
        .fold(f64::NEG_INFINITY, f64::max);

    Ok(ExperimentRow {
        seed,
        n,
        j_star: opt.j_star,
        j_hat,
        gap,
        epsilon_stat: report.epsilon_stat,
        bound,
        bound_ok: gap <= bound + 1e-9,
        q_error_l2,
        q_error_bound: 2.0 * report.epsilon_stat.sqrt(),
        q_error_ok,
        l1_advantage_lhs: l1.lhs,
        l1_advantage_rhs: l1.rhs,
        l1_advantage_ok: l1.holds,
        advantage: advantage_inner(
            &opt.q_star,
            cov.mu_c.weights(),
            &report.pi_hat,
            &opt.pi_star,
        ),
        c_c: cc.coefficient,
        c_c_all_policies: cc.all_policies,
        c_d: cd.coefficient,
        d_c_ratio,
        d_c_ratio_ok,
        sup_deviation,
        deviation_ok: sup_deviation <= report.epsilon_stat,
        minimax_gap,
        minimax_ok: minimax_gap <= 2.0 * report.epsilon_stat,
        u_w: report.u_w,
        u_b: report.u_b,
        q_index: report.q_index,
        q_star_index: classes.q_star_index,
        beta_index: report.beta_index,
        beta_star_index: classes.beta_star_index,
        error: String::new(),
    })
}

/// Runs one `(seed, N)` pair; failures are recorded in the row.
pub fn run_row(inst: &Instance, cfg: &ExperimentConfig, seed: u64, n: usize) -> ExperimentRow {
    compute_row(inst, cfg, seed, n).unwrap_or_else(|e| {
        log::warn!("row seed={seed} n={n} failed: {e}");
        ExperimentRow::failed(seed, n, inst.opt.j_star, &e)
    })
}

fn read_rows(path: &Path) -> Result<Vec<ExperimentRow>> {
    if !path.exists() || std::fs::metadata(path)?.len() == 0 {
        return Ok(Vec::new());
    }
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn write_rows<W: Write>(rows: &[ExperimentRow], out: W, header: bool) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .has_headers(header)
        .from_writer(out);
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Runs every `(seed, N)` pair not already present in `out_dir/run.rows`,
/// appending rows in config order, and returns all rows in the file.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<ExperimentRow>> {
    cfg.validate()?;
    let inst = Instance::from_config(cfg)?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(&cfg.run.rows);
    let mut rows = read_rows(&path)?;
    let done: HashSet<(u64, usize)> = rows.iter().map(|r| (r.seed, r.n)).collect();
    let pending: Vec<(u64, usize)> = cfg
        .run
        .seeds
        .iter()
        .flat_map(|&s| cfg.run.n_grid.iter().map(move |&n| (s, n)))
        .filter(|p| !done.contains(p))
        .collect::<Vec<_>>()
        .into_iter()
        .scan(HashSet::new(), |seen, p| Some(seen.insert(p).then_some(p)))
        .flatten()
        .collect();
    log::info!("{} rows done, {} pending", rows.len(), pending.len());

    let mut header = rows.is_empty();
    let chunk = (rayon::current_num_threads() * 2).max(1);
    for batch in pending.chunks(chunk) {
        let fresh: Vec<ExperimentRow> = batch
            .par_iter()
            .map(|&(seed, n)| run_row(&inst, cfg, seed, n))
            .collect();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        write_rows(&fresh, file, header)?;
        header = false;
        rows.extend(fresh);
    }
    Ok(rows)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Per-`N` summary: row counts, median gap and bound, pass rates.
pub fn summarize(rows: &[ExperimentRow]) -> String {
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    let mut out = String::from("n\trows\terrors\tmedian_gap\tmedian_bound\tbound\tq_error\tl1_advantage\tdeviation\tminimax\td_c_ratio\n");
    for n in ns {
        let group: Vec<&ExperimentRow> = rows.iter().filter(|r| r.n == n).collect();
        let ok: Vec<&&ExperimentRow> = group.iter().filter(|r| !r.is_error()).collect();
        let rate = |f: fn(&ExperimentRow) -> bool| {
            if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().filter(|r| f(r)).count() as f64 / ok.len() as f64
            }
        };
        out.push_str(&format!(
            "{n}\t{}\t{}\t{:.6}\t{:.6}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\n",
            group.len(),
            group.len() - ok.len(),
            median(ok.iter().map(|r| r.gap).collect()),
            median(ok.iter().map(|r| r.bound).collect()),
            rate(|r| r.bound_ok),
            rate(|r| r.q_error_ok),
            rate(|r| r.l1_advantage_ok),
            rate(|r| r.deviation_ok),
            rate(|r| r.minimax_ok),
            rate(|r| r.d_c_ratio_ok),
        ));
    }
    out
}
