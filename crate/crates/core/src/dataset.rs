//! Offline datasets of i.i.d. `(s, a, r, s')` tuples drawn from `mu^D x pi_b`.

use std::io::{BufRead, BufReader, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Policy, TabularMDP};
use crate::occupancy::{SaDistribution, StateDistribution};

/// Tuples per independently seeded stream.
const CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub mdp_digest: u64,
    pub n_states: usize,
    pub n_actions: usize,
    pub mu_data: Vec<f64>,
    /// `pi_b(a|s)` flattened s-major.
    pub pi_b: Vec<f64>,
    pub seed: u64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub tuples: Vec<Transition>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: DatasetMeta,
}

/// Inverse-CDF sampler that never returns a zero-probability index.
struct Categorical {
    cumulative: Vec<f64>,
    last_positive: usize,
}

impl Categorical {
    fn new(weights: &[f64]) -> Self {
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        let last_positive = weights.iter().rposition(|w| *w > 0.0).unwrap_or(0);
        Self {
            cumulative,
            last_positive,
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let i = self.cumulative.partition_point(|&c| c <= u);
        i.min(self.last_positive)
    }
}

/// `d^D = mu^D x pi_b`.
pub fn data_distribution(mu_data: &StateDistribution, pi_b: &Policy) -> Result<SaDistribution> {
    SaDistribution::compose(mu_data, pi_b)
}

/// Draws `n` tuples with `s ~ mu^D, a ~ pi_b(.|s), r = R(s,a), s' ~ P(.|s,a)`.
///
/// Tuple `i` comes from stream `i / 4096` of a ChaCha8 generator keyed by
/// `seed`, so chunks are generated in parallel and the result depends only
/// on `(seed, n)`.
pub fn sample_dataset(
    mdp: &TabularMDP,
    mu_data: &StateDistribution,
    pi_b: &Policy,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "dataset size must be at least 1".into(),
        ));
    }
    if mu_data.len() != mdp.n_states()
        || pi_b.n_states() != mdp.n_states()
        || pi_b.n_actions() != mdp.n_actions()
    {
        return Err(Error::DimensionMismatch("data distribution vs MDP".into()));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let state_sampler = Categorical::new(mu_data.weights());
    let action_samplers: Vec<Categorical> = (0..ns)
        .map(|s| Categorical::new(pi_b.action_probs(s)))
        .collect();
    let next_samplers: Vec<Categorical> = (0..ns * na)
        .map(|i| Categorical::new(mdp.next_dist(i / na, i % na)))
        .collect();

    let n_chunks = n.div_ceil(CHUNK);
    let tuples: Vec<Transition> = (0..n_chunks)
        .into_par_iter()
        .flat_map_iter(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            let len = CHUNK.min(n - chunk * CHUNK);
            let (states, actions, nexts) = (&state_sampler, &action_samplers, &next_samplers);
            (0..len)
                .map(|_| {
                    let s = states.sample(&mut rng);
                    let a = actions[s].sample(&mut rng);
                    let s_next = nexts[s * na + a].sample(&mut rng);
                    Transition {
                        s,
                        a,
                        r: mdp.reward(s, a),
                        s_next,
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();

    Ok(Dataset {
        meta: DatasetMeta {
            mdp_digest: mdp.digest(),
            n_states: ns,
            n_actions: na,
            mu_data: mu_data.weights().to_vec(),
            pi_b: pi_b.table().values().to_vec(),
            seed,
            n,
        },
        tuples,
    })
}

/// Normalized `(s, a)` counts.
pub fn empirical_state_action_dist(ds: &Dataset) -> Result<SaDistribution> {
    if ds.tuples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let na = ds.meta.n_actions;
    let mut counts = vec![0.0; ds.meta.n_states * na];
    for t in &ds.tuples {
        counts[t.s * na + t.a] += 1.0;
    }
    let n = ds.tuples.len() as f64;
    SaDistribution::new(
        ds.meta.n_states,
        na,
        counts.into_iter().map(|c| c / n).collect(),
    )
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    /// Checks `r = R(s, a)` exactly and `P(s'|s,a) > 0` for every tuple.
    pub fn check_consistency(&self, mdp: &TabularMDP) -> Result<()> {
        for (i, t) in self.tuples.iter().enumerate() {
            if t.s >= mdp.n_states() || t.a >= mdp.n_actions() || t.s_next >= mdp.n_states() {
                return Err(Error::Parse(format!("tuple {i} indexes outside the MDP")));
            }
            if t.r != mdp.reward(t.s, t.a) {
                return Err(Error::Parse(format!(
                    "tuple {i}: reward {} differs from R({}, {}) = {}",
                    t.r,
                    t.s,
                    t.a,
                    mdp.reward(t.s, t.a)
                )));
            }
            if mdp.p(t.s, t.a, t.s_next) <= 0.0 {
                return Err(Error::Parse(format!(
                    "tuple {i}: transition {} -> {} has zero probability",
                    t.s, t.s_next
                )));
            }
        }
        Ok(())
    }

    /// JSON lines: a `{"meta": ...}` header, then one tuple per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(
            &mut out,
            &Header {
                meta: self.meta.clone(),
            },
        )?;
        out.write_all(b"\n")?;
        for t in &self.tuples {
            serde_json::to_writer(&mut out, t)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: Read>(input: R) -> Result<Self> {
        let mut lines = BufReader::new(input).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("dataset file is empty".into()))??;
        let Header { meta } = serde_json::from_str(&header)?;
        let mut tuples = Vec::with_capacity(meta.n);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            tuples.push(serde_json::from_str(&line)?);
        }
        if tuples.len() != meta.n {
            return Err(Error::Parse(format!(
                "header announces {} tuples, file has {}",
                meta.n,
                tuples.len()
            )));
        }
        Ok(Self { meta, tuples })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four_state() -> TabularMDP {
        let mut p = Vec::new();
        for s in 0..4 {
            for a in 0..2 {
                let mut row = vec![0.1; 4];
                row[(s + a + 1) % 4] = 0.7;
                p.extend(row);
            }
        }
        let r = (0..8).map(|i| (i as f64) / 8.0).collect();
        TabularMDP::new(4, 2, p, r, 0.9, 1.0, vec![0.25; 4]).unwrap()
    }

    #[test]
    fn single_state_tuples_are_constant() {
        let m = TabularMDP::new(1, 1, vec![1.0], vec![0.5], 0.9, 1.0, vec![1.0]).unwrap();
        let ds = sample_dataset(
            &m,
            &StateDistribution::uniform(1),
            &Policy::uniform(1, 1),
            50,
            3,
        )
        .unwrap();
        assert!(ds.tuples.iter().all(|t| *t
            == Transition {
                s: 0,
                a: 0,
                r: 0.5,
                s_next: 0
            }));
    }

    #[test]
    fn sampling_is_deterministic_and_consistent() {
        let m = four_state();
        let mu = StateDistribution::new(vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        let pi = Policy::uniform(4, 2);
        let a = sample_dataset(&m, &mu, &pi, 10_000, 17).unwrap();
        let b = sample_dataset(&m, &mu, &pi, 10_000, 17).unwrap();
        assert_eq!(a, b);
        a.check_consistency(&m).unwrap();
        let c = sample_dataset(&m, &mu, &pi, 10_000, 18).unwrap();
        assert_ne!(a.tuples, c.tuples);
    }

    #[test]
    fn zero_size_is_rejected() {
        let m = four_state();
        assert!(sample_dataset(
            &m,
            &StateDistribution::uniform(4),
            &Policy::uniform(4, 2),
            0,
            1
        )
        .is_err());
    }

    #[test]
    fn empirical_distribution_cases() {
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
        let balanced = Dataset {
            meta: DatasetMeta {
                n: 4,
                ..meta.clone()
            },
            tuples: vec![
                Transition {
                    s: 0,
                    a: 0,
                    r: 0.0,
                    s_next: 0,
                },
                Transition {
                    s: 0,
                    a: 1,
                    r: 0.0,
                    s_next: 0,
                },
                Transition {
                    s: 0,
                    a: 1,
                    r: 0.0,
                    s_next: 0,
                },
                Transition {
                    s: 1,
                    a: 1,
                    r: 0.0,
                    s_next: 0,
                },
            ],
        };
        assert_eq!(
            empirical_state_action_dist(&balanced).unwrap().weights(),
            &[0.25, 0.5, 0.0, 0.25]
        );
        let empty = Dataset {
            meta,
            tuples: vec![],
        };
        assert!(matches!(
            empirical_state_action_dist(&empty),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let m = four_state();
        let ds = sample_dataset(
            &m,
            &StateDistribution::uniform(4),
            &Policy::uniform(4, 2),
            300,
            5,
        )
        .unwrap();
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"meta\":"));
        assert_eq!(text.lines().count(), 301);
        assert_eq!(Dataset::read_jsonl(&buf[..]).unwrap(), ds);
    }
}
