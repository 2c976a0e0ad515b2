//! Welfare functionals ("goodness" functions) over the agents' cumulative
//! utility vector.
//!
//! [`GoodnessSpec`] is the serializable description found in experiment
//! configs; [`Goodness`] is the validated evaluator for a fixed number of
//! agents. All evaluators are locally non-decreasing in every coordinate,
//! which is what lets an allocation policy compare "what if agent `n` got
//! this item" candidates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, OfdError, Result};

/// Largest vector length accepted by the permutation brute force.
pub const MAX_BRUTE_FORCE_LEN: usize = 8;

/// Serializable description of a welfare functional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GoodnessSpec {
    /// Weighted Gini social evaluation: `Σ w_n u_(n)` with `u_(1) ≤ … ≤ u_(N)`
    /// and non-increasing weights. Exactly one of `weights` / `rho` is set;
    /// `rho` expands to `w_n = ρ^{n-1}`.
    WeightedGini {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rho: Option<f64>,
    },
    /// Nash social welfare `Π u_n` (the `1/N` root is dropped, argmax-invariant).
    Nsw,
    /// `Σ log u_n`.
    LogNsw,
    /// `min_n u_n / p_n` with `p_n = r*_n / min_i r*_i` for target shares `r*`.
    TargetedWeights { target_ratios: Vec<f64> },
}

impl GoodnessSpec {
    pub fn gini_rho(rho: f64) -> Self {
        GoodnessSpec::WeightedGini { weights: None, rho: Some(rho) }
    }

    pub fn gini_weights(weights: Vec<f64>) -> Self {
        GoodnessSpec::WeightedGini { weights: Some(weights), rho: None }
    }

    /// Validates the spec for `n_agents` agents.
    pub fn resolve(&self, n_agents: usize) -> Result<Goodness> {
        if n_agents == 0 {
            return Err(invalid("number of agents must be at least 1"));
        }
        match self {
            GoodnessSpec::WeightedGini { weights, rho } => {
                let weights = match (weights, rho) {
                    (Some(w), None) => w.clone(),
                    (None, Some(r)) => weights_from_rho(*r, n_agents)?,
                    _ => {
                        return Err(invalid(
                            "weighted Gini needs exactly one of `weights` or `rho`",
                        ))
                    }
                };
                validate_gini_weights(&weights, n_agents)?;
                Ok(Goodness::WeightedGini { weights })
            }
            GoodnessSpec::Nsw => Ok(Goodness::Nsw { n_agents }),
            GoodnessSpec::LogNsw => Ok(Goodness::LogNsw { n_agents }),
            GoodnessSpec::TargetedWeights { target_ratios } => {
                Ok(Goodness::TargetedWeights { proportions: proportions(target_ratios, n_agents)? })
            }
        }
    }
}

/// `(1, ρ, ρ², …, ρ^{N-1})`.
pub fn weights_from_rho(rho: f64, n_agents: usize) -> Result<Vec<f64>> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(invalid(format!("rho must lie in (0, 1], got {rho}")));
    }
    if n_agents == 0 {
        return Err(invalid("number of agents must be at least 1"));
    }
    Ok(std::iter::successors(Some(1.0f64), |w| Some(w * rho)).take(n_agents).collect())
}

/// `(1, 0, …, 0)`: the egalitarian limit of [`weights_from_rho`] as `ρ → 0`.
pub fn egalitarian_weights(n_agents: usize) -> Vec<f64> {
    let mut w = vec![0.0; n_agents];
    if let Some(first) = w.first_mut() {
        *first = 1.0;
    }
    w
}

fn validate_gini_weights(w: &[f64], n_agents: usize) -> Result<()> {
    if w.len() != n_agents {
        return Err(invalid(format!("expected {n_agents} weights, got {}", w.len())));
    }
    if w.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(invalid("weights must lie in [0, 1]"));
    }
    if w.windows(2).any(|p| p[1] > p[0]) {
        return Err(invalid("weights must be non-increasing"));
    }
    if !(w[0] > 0.0) {
        return Err(invalid("the first weight must be positive"));
    }
    Ok(())
}

fn proportions(ratios: &[f64], n_agents: usize) -> Result<Vec<f64>> {
    if ratios.len() != n_agents {
        return Err(invalid(format!("expected {n_agents} target ratios, got {}", ratios.len())));
    }
    if ratios.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(invalid("target ratios must be positive"));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(invalid(format!("target ratios must sum to 1, got {total}")));
    }
    let smallest = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ratios.iter().map(|r| r / smallest).collect())
}

/// A validated welfare functional for a fixed number of agents.
#[derive(Debug, Clone, PartialEq)]
pub enum Goodness {
    WeightedGini { weights: Vec<f64> },
    Nsw { n_agents: usize },
    LogNsw { n_agents: usize },
    TargetedWeights { proportions: Vec<f64> },
}

impl Goodness {
    pub fn n_agents(&self) -> usize {
        match self {
            Goodness::WeightedGini { weights } => weights.len(),
            Goodness::Nsw { n_agents } | Goodness::LogNsw { n_agents } => *n_agents,
            Goodness::TargetedWeights { proportions } => proportions.len(),
        }
    }

    /// Largest Gini weight; 1 for the other functionals.
    pub fn w_max(&self) -> f64 {
        match self {
            Goodness::WeightedGini { weights } => weights.iter().copied().fold(0.0, f64::max),
            _ => 1.0,
        }
    }

    pub fn evaluate(&self, u: &[f64]) -> Result<f64> {
        let mut scratch = u.to_vec();
        self.evaluate_in_place(&mut scratch)
    }

    /// Value after adding `added` to agent `agent`'s utility; `u` is left unchanged.
    pub fn evaluate_candidate(&self, u: &[f64], agent: usize, added: f64) -> Result<f64> {
        if agent >= u.len() {
            return Err(invalid(format!("agent {agent} out of range for {} agents", u.len())));
        }
        if !(added >= 0.0) {
            return Err(invalid(format!("added utility must be non-negative, got {added}")));
        }
        let mut scratch = u.to_vec();
        scratch[agent] += added;
        self.evaluate_in_place(&mut scratch)
    }

    /// [`Goodness::evaluate_candidate`] for every agent `n` with `added[n]`.
    pub fn candidate_values(&self, u: &[f64], added: &[f64]) -> Result<Vec<f64>> {
        if added.len() != u.len() {
            return Err(invalid("one candidate utility per agent is required"));
        }
        let mut scratch = Vec::with_capacity(u.len());
        added
            .iter()
            .enumerate()
            .map(|(n, &a)| {
                if !(a >= 0.0) {
                    return Err(invalid(format!("added utility must be non-negative, got {a}")));
                }
                scratch.clear();
                scratch.extend_from_slice(u);
                scratch[n] += a;
                self.evaluate_in_place(&mut scratch)
            })
            .collect()
    }

    /// Evaluates `u`, which may be reordered.
    fn evaluate_in_place(&self, u: &mut [f64]) -> Result<f64> {
        if u.len() != self.n_agents() {
            return Err(invalid(format!(
                "utility vector has {} entries, goodness expects {}",
                u.len(),
                self.n_agents()
            )));
        }
        if u.iter().any(|x| !x.is_finite()) {
            return Err(OfdError::Domain("utility vector contains a non-finite entry".into()));
        }
        match self {
            Goodness::WeightedGini { weights } => {
                u.sort_by(f64::total_cmp);
                Ok(weights.iter().zip(u.iter()).map(|(w, x)| w * x).sum())
            }
            Goodness::Nsw { .. } => {
                require_positive(u, "Nash welfare")?;
                Ok(u.iter().product())
            }
            Goodness::LogNsw { .. } => {
                require_positive(u, "log Nash welfare")?;
                Ok(u.iter().map(|x| x.ln()).sum())
            }
            Goodness::TargetedWeights { proportions } => Ok(u
                .iter()
                .zip(proportions)
                .map(|(x, p)| x / p)
                .fold(f64::INFINITY, f64::min)),
        }
    }

    /// True for the Nash variants, which reject non-positive utilities.
    pub fn requires_positive(&self) -> bool {
        matches!(self, Goodness::Nsw { .. } | Goodness::LogNsw { .. })
    }

    /// Per-coordinate Lipschitz constants on the box `[lo, hi]^N`.
    pub fn lipschitz_constants(&self, lo: f64, hi: f64) -> Vec<f64> {
        let n = self.n_agents();
        match self {
            Goodness::WeightedGini { .. } => vec![self.w_max(); n],
            Goodness::LogNsw { .. } => vec![1.0 / lo; n],
            Goodness::Nsw { .. } => vec![hi.powi(n as i32 - 1); n],
            Goodness::TargetedWeights { proportions } => proportions.iter().map(|p| 1.0 / p).collect(),
        }
    }

    /// Random-walk check of local monotonicity and the Lipschitz ledger.
    ///
    /// Each trial moves one random coordinate of the current point to a fresh
    /// uniform value in `[lo, hi]` and checks that `G` moves in the same
    /// direction, by at most `c_i |Δu_i|`. Comparisons allow relative
    /// floating-point slack of `1e-12`.
    pub fn check_local_properties<R: Rng + ?Sized>(
        &self,
        u: &[f64],
        lo: f64,
        hi: f64,
        trials: usize,
        rng: &mut R,
    ) -> Result<PropertyReport> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(invalid(format!("invalid box [{lo}, {hi}]")));
        }
        if u.iter().any(|x| *x < lo || *x > hi) {
            return Err(invalid("starting point lies outside the box"));
        }
        let consts = self.lipschitz_constants(lo, hi);
        let mut point = u.to_vec();
        let mut g = self.evaluate(&point)?;
        let mut report = PropertyReport { trials, ..PropertyReport::default() };
        for _ in 0..trials {
            let i = rng.random_range(0..point.len());
            let new_value = rng.random_range(lo..=hi);
            let delta_u = new_value - point[i];
            point[i] = new_value;
            let g_new = self.evaluate(&point)?;
            let delta_g = g_new - g;
            let slack = 1e-12 * (g.abs() + g_new.abs());

            let wrong_direction = (delta_u > 0.0 && delta_g < -slack) || (delta_u < 0.0 && delta_g > slack);
            if wrong_direction {
                report.monotone_violations += 1;
            }
            if delta_u != 0.0 {
                let allowed = consts[i] * delta_u.abs();
                if delta_g.abs() > allowed + slack {
                    report.lipschitz_violations += 1;
                }
                if allowed > 0.0 {
                    report.worst_ratio = report.worst_ratio.max(delta_g.abs() / allowed);
                }
            }
            g = g_new;
        }
        Ok(report)
    }
}

fn require_positive(u: &[f64], what: &str) -> Result<()> {
    match u.iter().position(|x| *x <= 0.0) {
        Some(i) => Err(OfdError::Domain(format!(
            "{what} needs strictly positive utilities; agent {i} has {}",
            u[i]
        ))),
        None => Ok(()),
    }
}

/// Outcome of [`Goodness::check_local_properties`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PropertyReport {
    pub trials: usize,
    pub monotone_violations: usize,
    pub lipschitz_violations: usize,
    /// Largest observed `|ΔG| / (c_i |Δu_i|)`.
    pub worst_ratio: f64,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.monotone_violations == 0 && self.lipschitz_violations == 0
    }
}

/// Whether pairing non-increasing `w` with ascending `u` minimizes `Σ w_n u_n`
/// over all permutations of `u`, checked by enumeration.
pub fn opposite_order_check(w: &[f64], u: &[f64]) -> Result<bool> {
    if w.len() != u.len() {
        return Err(invalid("weights and utilities must have the same length"));
    }
    if w.len() > MAX_BRUTE_FORCE_LEN {
        return Err(OfdError::Size(format!(
            "permutation brute force is limited to {MAX_BRUTE_FORCE_LEN} entries, got {}",
            w.len()
        )));
    }
    if w.windows(2).any(|p| p[1] > p[0]) {
        return Err(invalid("weights must be non-increasing"));
    }
    let mut ascending = u.to_vec();
    ascending.sort_by(f64::total_cmp);
    let paired: f64 = w.iter().zip(&ascending).map(|(a, b)| a * b).sum();

    let scale: f64 = w.iter().zip(u).map(|(a, b)| (a * b).abs()).sum::<f64>().max(1.0);
    let mut perm = u.to_vec();
    let mut minimal = true;
    for_each_permutation(&mut perm, &mut |p| {
        let value: f64 = w.iter().zip(p.iter()).map(|(a, b)| a * b).sum();
        if paired > value + 1e-12 * scale {
            minimal = false;
        }
    });
    Ok(minimal)
}

/// Heap's algorithm.
fn for_each_permutation(items: &mut [f64], visit: &mut impl FnMut(&[f64])) {
    let n = items.len();
    let mut c = vec![0usize; n];
    visit(items);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                items.swap(0, i);
            } else {
                items.swap(c[i], i);
            }
            visit(items);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}
