//! Online fair division with contextual bandits.
//!
//! Items arrive one per round and must be irrevocably allocated to one of
//! `N` agents. The utility of an item-agent pair is an unknown function of
//! their concatenated features, observed with sub-Gaussian noise only for
//! the chosen pair. Policies pick the agent maximizing a welfare functional
//! (the [`goodness`] function) of the agents' cumulative utilities after a
//! hypothetical allocation, using optimistic or sampled utility estimates
//! from a contextual bandit ([`estimators`]).
//!
//! The [`simulator`] measures regret against the per-round oracle that knows
//! the true utilities, and the [`cli`] module reproduces the synthetic
//! experiment grid (`ofd run --preset ...`).

pub mod cli;
pub mod environment;
pub mod error;
pub mod estimators;
pub mod goodness;
pub mod linalg;
pub mod policies;
pub mod simulator;

pub use error::{OfdError, Result};

/// Dense real vector: an item-agent context or a parameter estimate.
pub type FeatureVector = Vec<f64>;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
