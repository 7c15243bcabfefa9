//! Tabular offline reinforcement learning with a covering distribution.
//!
//! The crate implements value-based offline policy optimization with a policy
//! ratio class on exactly solvable finite MDPs: a minimax estimate of `Q*`
//! over finite function classes, weighted by marginalized importance ratios,
//! followed by a policy-ratio argmax. Alongside the learner it ships exact
//! oracles (occupancy solves, concentrability coefficients, near-optimal
//! policy enumeration) used to check every inequality the method relies on.
//!
//! Modules, bottom-up:
//! - [`mdp`]: models, policies, Bellman solves, returns.
//! - [`occupancy`]: transition operator algebra and discounted occupancies.
//! - [`function_classes`]: finite tabulated `Q`, `W` and `B` classes.
//! - [`dataset`]: i.i.d. offline data synthesis.
//! - [`solver`]: empirical and population losses, the minimax solve, policy extraction.
//! - [`theory`]: brute-force verification of coverage assumptions and lemmas.
//! - [`harness`]: built-in MDPs, experiment configs and CSV reports.

pub mod dataset;
pub mod error;
pub mod function_classes;
pub mod harness;
mod linalg;
pub mod mdp;
pub mod occupancy;
pub mod solver;
pub mod theory;

pub use error::{Error, Result};
pub use mdp::{NonStationaryPolicy, Policy, QFunction, SaTable, StepPolicy, TabularMDP};
pub use occupancy::{SaDistribution, SaMeasure, Start, StateDistribution};
