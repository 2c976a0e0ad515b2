//! Synthetic problem instances: fixed agent features, a random item per
//! round, a hidden unit-norm parameter and noisy utility draws.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, OfdError, Result};
use crate::goodness::Goodness;

/// Upper end of the open feature box `(0, FEATURE_BOX)`.
pub const FEATURE_BOX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UtilityKind {
    /// `f(x) = xᵀθ*`.
    Linear,
    /// `f(x) = 10 z² · 10√d` with `z = xᵀθ* / (10√d)`.
    Square,
}

impl std::str::FromStr for UtilityKind {
    type Err = OfdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(UtilityKind::Linear),
            "square" => Ok(UtilityKind::Square),
            other => Err(invalid(format!("unknown utility kind `{other}` (linear | square)"))),
        }
    }
}

/// Parameters an instance is generated from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceParams {
    pub n_agents: usize,
    pub item_dim: usize,
    pub agent_dim: usize,
    pub utility_kind: UtilityKind,
    pub noise_r: f64,
}

impl InstanceParams {
    /// Context dimension `d = d_m + d_n`.
    pub fn dim(&self) -> usize {
        self.item_dim + self.agent_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return Err(invalid("number of agents must be at least 1"));
        }
        if self.item_dim == 0 || self.agent_dim == 0 {
            return Err(invalid("item and agent dimensions must be at least 1"));
        }
        if !(self.noise_r >= 0.0 && self.noise_r.is_finite()) {
            return Err(invalid(format!("noise_r must be non-negative, got {}", self.noise_r)));
        }
        Ok(())
    }
}

/// A generated problem. Immutable once built; serializes to JSON with
/// exactly these fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub n_agents: usize,
    pub item_dim: usize,
    pub agent_dim: usize,
    pub agent_features: Vec<Vec<f64>>,
    pub theta_star: Vec<f64>,
    pub utility_kind: UtilityKind,
    pub noise_r: f64,
}

/// Contexts of one round: the item and its concatenation with every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemContexts {
    pub item: Vec<f64>,
    pub per_agent: Vec<Vec<f64>>,
}

/// Oracle evaluation of one round on the true utilities.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleView {
    pub agent: usize,
    /// `f(m_{t,n})` for every agent.
    pub utilities: Vec<f64>,
    /// Goodness after allocating to each agent with its true utility.
    pub values: Vec<f64>,
}

fn open_box_sample<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let v = rng.random_range(0.0..FEATURE_BOX);
        if v > 0.0 {
            return v;
        }
    }
}

impl ProblemInstance {
    /// Agent features i.i.d. uniform on `(0, 10)`; `θ*` uniform on
    /// `(0, 10)^d`, then normalized.
    pub fn generate<R: Rng + ?Sized>(params: &InstanceParams, rng: &mut R) -> Result<Self> {
        params.validate()?;
        let agent_features = (0..params.n_agents)
            .map(|_| (0..params.agent_dim).map(|_| open_box_sample(rng)).collect())
            .collect();
        let raw: Vec<f64> = (0..params.dim()).map(|_| open_box_sample(rng)).collect();
        let norm = crate::dot(&raw, &raw).sqrt();
        Ok(Self {
            n_agents: params.n_agents,
            item_dim: params.item_dim,
            agent_dim: params.agent_dim,
            agent_features,
            theta_star: raw.iter().map(|v| v / norm).collect(),
            utility_kind: params.utility_kind,
            noise_r: params.noise_r,
        })
    }

    pub fn dim(&self) -> usize {
        self.item_dim + self.agent_dim
    }

    pub fn params(&self) -> InstanceParams {
        InstanceParams {
            n_agents: self.n_agents,
            item_dim: self.item_dim,
            agent_dim: self.agent_dim,
            utility_kind: self.utility_kind,
            noise_r: self.noise_r,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params().validate()?;
        if self.agent_features.len() != self.n_agents {
            return Err(invalid("one feature vector per agent is required"));
        }
        for (n, a) in self.agent_features.iter().enumerate() {
            if a.len() != self.agent_dim {
                return Err(invalid(format!("agent {n} has {} features, expected {}", a.len(), self.agent_dim)));
            }
            if a.iter().any(|v| !(*v > 0.0 && *v < FEATURE_BOX)) {
                return Err(invalid(format!("agent {n} has a feature outside (0, {FEATURE_BOX})")));
            }
        }
        if self.theta_star.len() != self.dim() {
            return Err(invalid("theta_star length must equal item_dim + agent_dim"));
        }
        let norm = crate::dot(&self.theta_star, &self.theta_star).sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("theta_star must have unit norm, got {norm}")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| invalid(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let instance: Self = serde_json::from_str(text).map_err(|e| invalid(format!("instance JSON: {e}")))?;
        instance.validate()?;
        Ok(instance)
    }

    /// Draws an item uniformly from `(0, 10)^{d_m}` and concatenates it with
    /// each agent's features.
    pub fn draw_item<R: Rng + ?Sized>(&self, rng: &mut R) -> ItemContexts {
        let item: Vec<f64> = (0..self.item_dim).map(|_| open_box_sample(rng)).collect();
        let per_agent = self.agent_features.iter().map(|a| [item.as_slice(), a].concat()).collect();
        ItemContexts { item, per_agent }
    }

    /// Expected utility `f(x)`.
    pub fn true_utility(&self, x: &[f64]) -> f64 {
        let s = crate::dot(x, &self.theta_star);
        match self.utility_kind {
            UtilityKind::Linear => s,
            UtilityKind::Square => {
                let range = FEATURE_BOX * (self.dim() as f64).sqrt();
                let z = s / range;
                10.0 * z * z * range
            }
        }
    }

    /// `f(x) + ε` with `ε ~ Normal(0, R²)`.
    pub fn sample_utility<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> f64 {
        let eps: f64 = rng.sample(StandardNormal);
        self.true_utility(x) + self.noise_r * eps
    }

    /// Evaluates every agent as the recipient with its true utility on the
    /// current totals; the oracle agent is the first maximizer.
    pub fn oracle(&self, goodness: &Goodness, totals: &[f64], contexts: &ItemContexts) -> Result<OracleView> {
        if totals.len() != self.n_agents || contexts.per_agent.len() != self.n_agents {
            return Err(invalid("totals and contexts must have one entry per agent"));
        }
        let utilities: Vec<f64> = contexts.per_agent.iter().map(|x| self.true_utility(x)).collect();
        let values = goodness.candidate_values(totals, &utilities)?;
        let mut agent = 0;
        for (n, v) in values.iter().enumerate() {
            if *v > values[agent] {
                agent = n;
            }
        }
        Ok(OracleView { agent, utilities, values })
    }

    pub fn oracle_agent(&self, goodness: &Goodness, totals: &[f64], contexts: &ItemContexts) -> Result<usize> {
        Ok(self.oracle(goodness, totals, contexts)?.agent)
    }
}
