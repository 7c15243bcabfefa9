//! Experiment configuration files (TOML).
//!
//! ```toml
//! [mdp]
//! builtin = "random"        # "counterexample" | "random"; or `file = "model.toml"`
//! gamma = 0.9
//! n_states = 5
//! n_actions = 3
//! seed = 1
//! reward_sparsity = 0.3
//!
//! [data]
//! mu = "uniform"            # "uniform" | "initial" | [weights...]
//! behavior = "uniform"      # "uniform" | { epsilon_greedy = 0.2 }
//!
//! [covering]
//! mode = "uniform"          # "uniform" | "data" | "mixture" | "explicit"
//! mu_c = [0.5, 0.5, 0.0, 0.0]   # explicit mode only
//! pi_c = "behavior"         # "behavior" | "uniform"
//! mixture_eps = 0.0
//! mixture_horizon = 2
//!
//! [classes]
//! distractors = 7
//! scale = 0.3
//!
//! [run]
//! n_grid = [1000, 10000]
//! delta = 0.1
//! seeds = [0, 1, 2]
//! horizon = 3
//! enumeration_cap = 2000000
//! adversarial_tie_break = false
//! rows = "rows.csv"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::theory::DEFAULT_ENUMERATION_CAP;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mdp: MdpSpec,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub covering: CoveringSpec,
    #[serde(default)]
    pub classes: ClassSpec,
    pub run: RunSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpSpec {
    pub builtin: Option<String>,
    pub file: Option<PathBuf>,
    pub gamma: Option<f64>,
    #[serde(default = "default_states")]
    pub n_states: usize,
    #[serde(default = "default_actions")]
    pub n_actions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub reward_sparsity: f64,
}

fn default_states() -> usize {
    5
}

fn default_actions() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateSpec {
    Named(String),
    Weights(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorSpec {
    Uniform,
    /// `(1 - e) pi*_e + e * uniform`.
    EpsilonGreedy(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    #[serde(default = "uniform_states")]
    pub mu: StateSpec,
    #[serde(default = "uniform_behavior")]
    pub behavior: BehaviorSpec,
}

fn uniform_states() -> StateSpec {
    StateSpec::Named("uniform".into())
}

fn uniform_behavior() -> BehaviorSpec {
    BehaviorSpec::Uniform
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            mu: uniform_states(),
            behavior: uniform_behavior(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoveringMode {
    Uniform,
    Data,
    Mixture,
    Explicit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiCSpec {
    Behavior,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoveringSpec {
    #[serde(default = "default_mode")]
    pub mode: CoveringMode,
    pub mu_c: Option<Vec<f64>>,
    #[serde(default = "default_pi_c")]
    pub pi_c: PiCSpec,
    #[serde(default)]
    pub mixture_eps: f64,
    #[serde(default = "default_mixture_horizon")]
    pub mixture_horizon: usize,
}

fn default_mode() -> CoveringMode {
    CoveringMode::Uniform
}

fn default_pi_c() -> PiCSpec {
    PiCSpec::Behavior
}

fn default_mixture_horizon() -> usize {
    2
}

impl Default for CoveringSpec {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            mu_c: None,
            pi_c: default_pi_c(),
            mixture_eps: 0.0,
            mixture_horizon: default_mixture_horizon(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    #[serde(default = "default_distractors")]
    pub distractors: usize,
    #[serde(default = "default_scale")]
    pub scale: f64,
}

fn default_distractors() -> usize {
    7
}

fn default_scale() -> f64 {
    0.3
}

impl Default for ClassSpec {
    fn default() -> Self {
        Self {
            distractors: default_distractors(),
            scale: default_scale(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub n_grid: Vec<usize>,
    pub delta: f64,
    pub seeds: Vec<u64>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_cap")]
    pub enumeration_cap: usize,
    #[serde(default)]
    pub adversarial_tie_break: bool,
    #[serde(default = "default_rows")]
    pub rows: PathBuf,
}

fn default_horizon() -> usize {
    3
}

fn default_cap() -> usize {
    DEFAULT_ENUMERATION_CAP
}

fn default_rows() -> PathBuf {
    PathBuf::from("rows.csv")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg = Self::read(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config without validating it; a relative `mdp.file` is
    /// resolved against the config's directory.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(file) = cfg.mdp.file.as_mut() {
            if file.is_relative() {
                *file = path.parent().unwrap_or(Path::new(".")).join(&*file);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match (&self.mdp.builtin, &self.mdp.file) {
            (Some(_), Some(_)) | (None, None) => {
                return bad("[mdp] needs exactly one of `builtin` and `file`".into())
            }
            (Some(name), None) => {
                if name != "counterexample" && name != "random" {
                    return bad(format!("unknown builtin MDP `{name}`"));
                }
                if self.mdp.gamma.is_none() {
                    return bad("[mdp] builtin models need `gamma`".into());
                }
            }
            (None, Some(file)) => {
                if !file.exists() {
                    return bad(format!("MDP file {} does not exist", file.display()));
                }
                if self.mdp.gamma.is_some() {
                    return bad("[mdp] `gamma` comes from the file; remove it".into());
                }
            }
        }
        if let Some(g) = self.mdp.gamma {
            if !(g > 0.0 && g < 1.0) {
                return bad(format!("gamma = {g} must lie in (0, 1)"));
            }
        }
        if let StateSpec::Named(name) = &self.data.mu {
            if name != "uniform" && name != "initial" {
                return bad(format!("unknown data distribution `{name}`"));
            }
        }
        if let BehaviorSpec::EpsilonGreedy(e) = self.data.behavior {
            if !(e > 0.0 && e <= 1.0) {
                return bad(format!("epsilon_greedy = {e} must lie in (0, 1]"));
            }
        }
        if self.covering.mode == CoveringMode::Explicit && self.covering.mu_c.is_none() {
            return bad("explicit covering needs `mu_c`".into());
        }
        if !(self.covering.mixture_eps >= 0.0) {
            return bad("mixture_eps must be non-negative".into());
        }
        if !(self.classes.scale >= 0.0) {
            return bad("class scale must be non-negative".into());
        }
        if !(self.run.delta > 0.0 && self.run.delta < 1.0) {
            return bad(format!("delta = {} must lie in (0, 1)", self.run.delta));
        }
        if self.run.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        if self.run.n_grid.is_empty() || self.run.n_grid.contains(&0) {
            return bad("n_grid must be non-empty with positive sizes".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[mdp]
builtin = "counterexample"
gamma = 0.9

[run]
n_grid = [100]
delta = 0.1
seeds = [1, 2]
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.covering.mode, CoveringMode::Uniform);
        assert_eq!(c.covering.pi_c, PiCSpec::Behavior);
        assert_eq!(c.classes.distractors, 7);
        assert_eq!(
            ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap(),
            c
        );
    }

    #[test]
    fn rejections() {
        let empty = MINIMAL.replace("seeds = [1, 2]", "seeds = []");
        assert!(matches!(
            ExperimentConfig::from_toml(&empty),
            Err(Error::Config(_))
        ));
        let delta = MINIMAL.replace("delta = 0.1", "delta = 1.0");
        assert!(ExperimentConfig::from_toml(&delta).is_err());
        let missing = MINIMAL.replace(
            "builtin = \"counterexample\"",
            "file = \"/nonexistent/model.toml\"",
        );
        assert!(ExperimentConfig::from_toml(&missing).is_err());
        let unknown = MINIMAL.replace("gamma = 0.9", "gamma = 0.9\ncolour = 1");
        assert!(ExperimentConfig::from_toml(&unknown).is_err());
    }

    #[test]
    fn inline_variants_parse() {
        let text = MINIMAL.to_string()
            + "\n[data]\nmu = [0.25, 0.25, 0.25, 0.25]\nbehavior = { epsilon_greedy = 0.2 }\n\n[covering]\nmode = \"explicit\"\nmu_c = [0.5, 0.5, 0.0, 0.0]\npi_c = \"uniform\"\n";
        let c = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(c.data.behavior, BehaviorSpec::EpsilonGreedy(0.2));
        assert_eq!(c.data.mu, StateSpec::Weights(vec![0.25; 4]));
    }
}
