//! Finite tabulated function classes: values `Q`, density ratios `W` and
//! policy ratios `B`, with constructors that plant the realizable element.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::snap_roundoff;
use crate::mdp::{solve_optimal, OptimalSolution, Policy, SaTable, TabularMDP};
use crate::occupancy::{resolvent_apply, SaDistribution};

/// Per-state normalization tolerance `|<beta(s,.), pi_c(.|s)> - 1|` for `B` members.
pub const RATIO_NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassKind {
    /// State-action values in `[0, V_max]`.
    Q,
    /// Distribution ratios in `[0, U_W]`.
    W,
    /// Policy ratios in `[0, U_B]`, normalized against `pi_c` at every state.
    B,
}

/// An explicit, ordered, finite set of tabulated functions over `S x A`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteFunctionClass {
    kind: ClassKind,
    bound: f64,
    members: Vec<SaTable>,
}

impl FiniteFunctionClass {
    /// A value class; `v_max` is the nominal range bound.
    pub fn value_class(members: Vec<SaTable>, v_max: f64) -> Result<Self> {
        let class = Self {
            kind: ClassKind::Q,
            bound: v_max,
            members,
        };
        class.check_ranges()?;
        Ok(class)
    }

    /// A ratio class whose bound is the true maximum over members.
    pub fn weight_class(members: Vec<SaTable>) -> Result<Self> {
        let class = Self {
            kind: ClassKind::W,
            bound: max_entry(&members),
            members,
        };
        class.check_ranges()?;
        Ok(class)
    }

    /// A policy-ratio class; every member must be normalized against `pi_c`.
    pub fn policy_ratio_class(members: Vec<SaTable>, pi_c: &Policy) -> Result<Self> {
        let class = Self {
            kind: ClassKind::B,
            bound: max_entry(&members),
            members,
        };
        class.check_ranges()?;
        class.check_normalization(pi_c)?;
        Ok(class)
    }

    fn check_ranges(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::InvalidParameter("function class is empty".into()));
        }
        let dims = self.members[0].dims();
        for (index, m) in self.members.iter().enumerate() {
            if m.dims() != dims {
                return Err(Error::ClassMember {
                    index,
                    detail: "dimensions differ from member 0".into(),
                });
            }
            if let Some(x) = m
                .values()
                .iter()
                .find(|x| !(**x >= 0.0 && **x <= self.bound))
            {
                return Err(Error::ClassMember {
                    index,
                    detail: format!("value {x} outside [0, {}]", self.bound),
                });
            }
        }
        Ok(())
    }

    /// `<beta(s,.), pi_c(.|s)> = 1` at every state, for every member.
    pub fn check_normalization(&self, pi_c: &Policy) -> Result<()> {
        for (index, m) in self.members.iter().enumerate() {
            for s in 0..m.n_states() {
                let z = ratio_normalizer(m, pi_c, s);
                if (z - 1.0).abs() > RATIO_NORMALIZATION_TOL {
                    return Err(Error::ClassMember {
                        index,
                        detail: format!("normalizer {z} at state {s}"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> ClassKind {
        self.kind
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn members(&self) -> &[SaTable] {
        &self.members
    }

    pub fn member(&self, i: usize) -> &SaTable {
        &self.members[i]
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Inserts `member` in front; the bound of `W`/`B` classes is refreshed.
    pub fn with_leading_member(&self, member: SaTable, pi_c: Option<&Policy>) -> Result<Self> {
        let mut members = Vec::with_capacity(self.members.len() + 1);
        members.push(member);
        members.extend(self.members.iter().cloned());
        match (self.kind, pi_c) {
            (ClassKind::Q, _) => Self::value_class(members, self.bound),
            (ClassKind::W, _) => Self::weight_class(members),
            (ClassKind::B, Some(pi_c)) => Self::policy_ratio_class(members, pi_c),
            (ClassKind::B, None) => Err(Error::InvalidParameter(
                "a policy-ratio class needs pi_c".into(),
            )),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Parses a class file; ranges are re-checked, `B` normalization needs
    /// [`check_normalization`](Self::check_normalization) with the right `pi_c`.
    pub fn from_toml(text: &str) -> Result<Self> {
        let class: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        class.check_ranges()?;
        Ok(class)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }
}

fn max_entry(members: &[SaTable]) -> f64 {
    members.iter().map(SaTable::max_value).fold(0.0, f64::max)
}

pub(crate) fn ratio_normalizer(beta: &SaTable, pi_c: &Policy, s: usize) -> f64 {
    beta.row(s)
        .iter()
        .zip(pi_c.action_probs(s))
        .map(|(b, p)| b * p)
        .sum()
}

/// `(I - gamma P_{pi*_e})^{-1} (d_c o Q*)`, the target of `w* o d^D`.
pub fn optimal_w_numerator(
    mdp: &TabularMDP,
    opt: &OptimalSolution,
    d_c: &SaDistribution,
) -> Result<Vec<f64>> {
    let rhs: Vec<f64> = d_c
        .weights()
        .iter()
        .zip(opt.q_star.values())
        .map(|(d, q)| d * q)
        .collect();
    let mut x = resolvent_apply(mdp, &opt.pi_star, &rhs)?;
    snap_roundoff(&mut x);
    Ok(x)
}

/// The realizable density ratio `w*` with `w* o d^D = (I - gamma P_{pi*_e})^{-1}(d_c o Q*)`.
pub fn optimal_w(
    mdp: &TabularMDP,
    d_c: &SaDistribution,
    d_data: &SaDistribution,
) -> Result<SaTable> {
    optimal_w_for(mdp, &solve_optimal(mdp)?, d_c, d_data)
}

pub fn optimal_w_for(
    mdp: &TabularMDP,
    opt: &OptimalSolution,
    d_c: &SaDistribution,
    d_data: &SaDistribution,
) -> Result<SaTable> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let x = optimal_w_numerator(mdp, opt, d_c)?;
    let mut w = SaTable::zeros(ns, na);
    for s in 0..ns {
        for a in 0..na {
            let (num, den) = (x[s * na + a], d_data.get(s, a));
            let ratio = if den > 0.0 {
                num.max(0.0) / den
            } else if num > 0.0 {
                return Err(Error::Unrealizable {
                    state: s,
                    action: a,
                    numerator: num,
                });
            } else {
                1.0
            };
            w.set(s, a, ratio);
        }
    }
    let scale = x.iter().copied().fold(1.0, f64::max);
    let residual = w
        .values()
        .iter()
        .zip(d_data.weights())
        .zip(&x)
        .map(|((w, d), x)| (w * d - x).abs())
        .fold(0.0, f64::max);
    if residual > 1e-9 * scale {
        return Err(Error::Numerical(format!(
            "w* identity residual {residual:e}"
        )));
    }
    Ok(w)
}

/// The realizable policy ratio `beta* = pi*_e / pi_c` with `0/0 = 1`.
pub fn optimal_beta(pi_star: &Policy, pi_c: &Policy) -> Result<SaTable> {
    let (ns, na) = (pi_star.n_states(), pi_star.n_actions());
    let mut beta = SaTable::zeros(ns, na);
    for s in 0..ns {
        for a in 0..na {
            let (num, den) = (pi_star.prob(s, a), pi_c.prob(s, a));
            let ratio = if den > 0.0 {
                num / den
            } else if num > 0.0 {
                return Err(Error::PolicyUncovered {
                    state: s,
                    action: a,
                });
            } else {
                1.0
            };
            beta.set(s, a, ratio);
        }
    }
    Ok(beta)
}

/// Distractor generation settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistractorSpec {
    pub count: usize,
    /// Noise amplitude relative to each class's scale (`V_max`, `max w*`, `max beta*`).
    pub scale: f64,
}

/// The three classes plus the positions of their realizable members.
#[derive(Clone, Debug)]
pub struct RealizableClasses {
    pub q: FiniteFunctionClass,
    pub w: FiniteFunctionClass,
    pub b: FiniteFunctionClass,
    pub q_star_index: usize,
    pub w_star_index: usize,
    pub beta_star_index: usize,
}

impl RealizableClasses {
    pub fn q_star(&self) -> &SaTable {
        self.q.member(self.q_star_index)
    }

    pub fn w_star(&self) -> &SaTable {
        self.w.member(self.w_star_index)
    }

    pub fn beta_star(&self) -> &SaTable {
        self.b.member(self.beta_star_index)
    }
}

/// Smoothed noise in `[-1, 1]`: half a per-state offset, half per-pair jitter.
fn smoothed_noise(rng: &mut ChaCha8Rng, ns: usize, na: usize) -> SaTable {
    let offsets: Vec<f64> = (0..ns).map(|_| rng.random_range(-1.0..=1.0)).collect();
    SaTable::from_fn(ns, na, |s, _| {
        0.5 * offsets[s] + 0.5 * rng.random_range(-1.0..=1.0)
    })
}

fn plant(members: Vec<SaTable>, realized: SaTable, at: usize) -> Vec<SaTable> {
    let mut out = members;
    out.insert(at, realized);
    out
}

/// Builds `Q`, `W`, `B` each holding its realizable element at a seeded
/// position among `spec.count` clipped-noise distractors.
pub fn build_realizable_classes(
    mdp: &TabularMDP,
    opt: &OptimalSolution,
    d_c: &SaDistribution,
    d_data: &SaDistribution,
    pi_c: &Policy,
    spec: DistractorSpec,
    seed: u64,
) -> Result<RealizableClasses> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let v_max = mdp.v_max();
    let q_star = opt.q_star.map(|x| x.clamp(0.0, v_max));
    let w_star = optimal_w_for(mdp, opt, d_c, d_data)?;
    let beta_star = optimal_beta(&opt.pi_star, pi_c)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let q_members: Vec<SaTable> = (0..spec.count)
        .map(|_| {
            let noise = smoothed_noise(&mut rng, ns, na);
            SaTable::from_fn(ns, na, |s, a| {
                (q_star.get(s, a) + spec.scale * v_max * noise.get(s, a)).clamp(0.0, v_max)
            })
        })
        .collect();

    let w_scale = w_star.max_value().max(1.0);
    let w_members: Vec<SaTable> = (0..spec.count)
        .map(|_| {
            let noise = smoothed_noise(&mut rng, ns, na);
            SaTable::from_fn(ns, na, |s, a| {
                (w_star.get(s, a) + spec.scale * w_scale * noise.get(s, a)).max(0.0)
            })
        })
        .collect();

    let b_scale = beta_star.max_value().max(1.0);
    let b_members: Vec<SaTable> = (0..spec.count)
        .map(|_| {
            let noise = smoothed_noise(&mut rng, ns, na);
            let raw = SaTable::from_fn(ns, na, |s, a| {
                (beta_star.get(s, a) + spec.scale * b_scale * noise.get(s, a)).max(0.0)
            });
            normalize_ratio(&raw, &beta_star, pi_c)
        })
        .collect();

    let q_at = rng.random_range(0..=spec.count);
    let w_at = rng.random_range(0..=spec.count);
    let b_at = rng.random_range(0..=spec.count);

    Ok(RealizableClasses {
        q: FiniteFunctionClass::value_class(plant(q_members, q_star, q_at), v_max)?,
        w: FiniteFunctionClass::weight_class(plant(w_members, w_star, w_at))?,
        b: FiniteFunctionClass::policy_ratio_class(plant(b_members, beta_star, b_at), pi_c)?,
        q_star_index: q_at,
        w_star_index: w_at,
        beta_star_index: b_at,
    })
}

/// Rescales each state's row so `<beta(s,.), pi_c(.|s)> = 1`; rows with a zero
/// normalizer fall back to `fallback`.
pub fn normalize_ratio(raw: &SaTable, fallback: &SaTable, pi_c: &Policy) -> SaTable {
    let (ns, na) = raw.dims();
    let z: Vec<f64> = (0..ns).map(|s| ratio_normalizer(raw, pi_c, s)).collect();
    SaTable::from_fn(ns, na, |s, a| {
        if z[s] > 0.0 {
            raw.get(s, a) / z[s]
        } else {
            fallback.get(s, a)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single_state(reward: f64) -> TabularMDP {
        TabularMDP::new(1, 1, vec![1.0], vec![reward], 0.9, 1.0, vec![1.0]).unwrap()
    }

    fn chain() -> TabularMDP {
        // 0 -a0-> 0, 0 -a1-> 1, 1 absorbing with reward.
        TabularMDP::new(
            2,
            2,
            vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0],
            vec![0.0, 0.0, 1.0, 1.0],
            0.9,
            1.0,
            vec![1.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn scalar_w_star() {
        let m = single_state(1.0);
        let d = SaDistribution::uniform(1, 1);
        let w = optimal_w(&m, &d, &d).unwrap();
        assert_abs_diff_eq!(w.get(0, 0), 100.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_rewards_give_zero_ratio_on_support_and_one_off_support() {
        let m = TabularMDP::new(
            2,
            1,
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0],
            0.9,
            1.0,
            vec![1.0, 0.0],
        )
        .unwrap();
        let d_c = SaDistribution::new(2, 1, vec![1.0, 0.0]).unwrap();
        let d_data = SaDistribution::new(2, 1, vec![1.0, 0.0]).unwrap();
        let w = optimal_w(&m, &d_c, &d_data).unwrap();
        assert_eq!(w.values(), &[0.0, 1.0]);
    }

    #[test]
    fn missing_data_support_is_unrealizable() {
        let m = chain();
        // d_c sits on (0, a1); the optimal flow reaches state 1 which the data never sees.
        let d_c = SaDistribution::point(2, 2, 0, 1);
        let d_data = SaDistribution::new(2, 2, vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        assert!(matches!(
            optimal_w(&m, &d_c, &d_data),
            Err(Error::Unrealizable { state: 1, .. })
        ));
    }

    #[test]
    fn beta_star_cases() {
        let pi_star = Policy::deterministic(&[1, 0], 2).unwrap();
        let same = optimal_beta(&pi_star, &pi_star).unwrap();
        assert_eq!(same.values(), &[1.0, 1.0, 1.0, 1.0]);
        let uniform = optimal_beta(&pi_star, &Policy::uniform(2, 2)).unwrap();
        assert_eq!(uniform.values(), &[0.0, 2.0, 2.0, 0.0]);
        let missing = Policy::deterministic(&[0, 0], 2).unwrap();
        assert!(matches!(
            optimal_beta(&pi_star, &missing),
            Err(Error::PolicyUncovered {
                state: 0,
                action: 1
            })
        ));
    }

    #[test]
    fn class_invariants_are_enforced() {
        let bad = SaTable::constant(1, 2, 11.0);
        assert!(FiniteFunctionClass::value_class(vec![bad], 10.0).is_err());
        let unnormalized = SaTable::constant(1, 2, 0.7);
        assert!(FiniteFunctionClass::policy_ratio_class(
            vec![unnormalized],
            &Policy::uniform(1, 2)
        )
        .is_err());
        assert!(FiniteFunctionClass::weight_class(vec![]).is_err());
    }

    #[test]
    fn singleton_build_without_distractors() {
        let m = chain();
        let opt = solve_optimal(&m).unwrap();
        let d = SaDistribution::uniform(2, 2);
        let pi_c = Policy::uniform(2, 2);
        let spec = DistractorSpec {
            count: 0,
            scale: 0.3,
        };
        let c = build_realizable_classes(&m, &opt, &d, &d, &pi_c, spec, 5).unwrap();
        assert_eq!((c.q.len(), c.w.len(), c.b.len()), (1, 1, 1));
        assert_eq!(c.q_star(), &opt.q_star);
        assert_eq!(c.w.bound(), c.w_star().max_value());
    }

    #[test]
    fn seeded_builds_are_identical_and_valid() {
        let m = chain();
        let opt = solve_optimal(&m).unwrap();
        let d = SaDistribution::uniform(2, 2);
        let pi_c = Policy::uniform(2, 2);
        let spec = DistractorSpec {
            count: 6,
            scale: 0.4,
        };
        let a = build_realizable_classes(&m, &opt, &d, &d, &pi_c, spec, 9).unwrap();
        let b = build_realizable_classes(&m, &opt, &d, &d, &pi_c, spec, 9).unwrap();
        assert_eq!(a.q, b.q);
        assert_eq!(a.w, b.w);
        assert_eq!(a.b, b.b);
        assert_eq!(a.q.len(), 7);
        a.b.check_normalization(&pi_c).unwrap();
        let true_max =
            a.w.members()
                .iter()
                .map(SaTable::max_value)
                .fold(0.0, f64::max);
        assert_eq!(a.w.bound(), true_max);
    }

    #[test]
    fn class_file_round_trip() {
        let c = FiniteFunctionClass::value_class(
            vec![SaTable::from_vec(1, 2, vec![0.1, 9.999999999999998]).unwrap()],
            10.0,
        )
        .unwrap();
        assert_eq!(
            FiniteFunctionClass::from_toml(&c.to_toml().unwrap()).unwrap(),
            c
        );
    }
}
