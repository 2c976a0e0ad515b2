//! Allocation policies: map an item's per-agent contexts, the agents'
//! cumulative utilities and an estimator to the agent receiving the item.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, OfdError, Result};
use crate::estimators::{ConfidenceParams, Estimator, GpParams, GpState, RidgeState};
use crate::goodness::Goodness;

/// Relative tolerance under which two goodness values count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Exploration probability of the greedy baseline when none is given.
pub const DEFAULT_GREEDY_EPSILON: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Ridge regression with an optimistic confidence bonus.
    Ucb,
    /// Ridge regression with one posterior parameter sample per round.
    Ts,
    /// GP posterior mean plus information-gain width.
    GpUcb,
    /// Joint GP posterior sample over the round's contexts.
    GpTs,
    /// Ridge mean without bonus; uniform exploration with probability `epsilon`.
    Greedy { epsilon: f64 },
    /// Uniformly random agent.
    Uniform,
}

impl PolicyKind {
    /// Short name used in configs and output file names.
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Ucb => "ucb",
            PolicyKind::Ts => "ts",
            PolicyKind::GpUcb => "gp-ucb",
            PolicyKind::GpTs => "gp-ts",
            PolicyKind::Greedy { .. } => "greedy",
            PolicyKind::Uniform => "uniform",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PolicyKind::Greedy { epsilon } if !(0.0..=1.0).contains(epsilon) => {
                Err(invalid(format!("greedy epsilon must lie in [0, 1], got {epsilon}")))
            }
            _ => Ok(()),
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = OfdError;

    /// Accepts the short names; `greedy:<eps>` sets the exploration rate.
    fn from_str(s: &str) -> Result<Self> {
        let kind = match s {
            "ucb" => PolicyKind::Ucb,
            "ts" => PolicyKind::Ts,
            "gp-ucb" => PolicyKind::GpUcb,
            "gp-ts" => PolicyKind::GpTs,
            "greedy" => PolicyKind::Greedy { epsilon: DEFAULT_GREEDY_EPSILON },
            "uniform" => PolicyKind::Uniform,
            other => match other.strip_prefix("greedy:") {
                Some(eps) => PolicyKind::Greedy {
                    epsilon: eps.parse().map_err(|_| invalid(format!("bad greedy epsilon `{eps}`")))?,
                },
                None => {
                    return Err(invalid(format!(
                        "unknown policy `{other}` (ucb | ts | gp-ucb | gp-ts | greedy | uniform)"
                    )))
                }
            },
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// Cumulative realized utilities and allocation counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityLedger {
    pub totals: Vec<f64>,
    pub counts: Vec<u64>,
    /// Current round, starting at 1.
    pub round: u64,
}

impl UtilityLedger {
    pub fn new(n_agents: usize) -> Self {
        Self { totals: vec![0.0; n_agents], counts: vec![0; n_agents], round: 1 }
    }

    pub fn n_agents(&self) -> usize {
        self.totals.len()
    }

    pub fn record(&mut self, agent: usize, y: f64) -> Result<()> {
        if agent >= self.n_agents() {
            return Err(invalid(format!("agent {agent} out of range for {} agents", self.n_agents())));
        }
        self.totals[agent] += y;
        self.counts[agent] += 1;
        self.round += 1;
        Ok(())
    }
}

/// Outcome of one selection.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationDecision {
    pub agent: usize,
    /// Estimated utility per agent; empty when no scoring took place
    /// (round-robin, uniform or exploration rounds).
    pub per_agent_scores: Vec<f64>,
    /// Goodness of allocating to each agent with its clamped score; empty
    /// whenever `per_agent_scores` is.
    pub per_agent_goodness: Vec<f64>,
    pub was_round_robin: bool,
    pub was_exploration: bool,
}

impl AllocationDecision {
    fn unscored(agent: usize, was_round_robin: bool, was_exploration: bool) -> Self {
        Self {
            agent,
            per_agent_scores: Vec::new(),
            per_agent_goodness: Vec::new(),
            was_round_robin,
            was_exploration,
        }
    }
}

/// A policy instance bound to one run.
#[derive(Debug, Clone)]
pub struct Policy {
    kind: PolicyKind,
    estimator: Option<Estimator>,
    confidence: ConfidenceParams,
    dim: usize,
    alpha_override: Option<f64>,
}

impl Policy {
    pub fn new(kind: PolicyKind, dim: usize, confidence: ConfidenceParams, gp: GpParams) -> Result<Self> {
        kind.validate()?;
        confidence.validate()?;
        if dim == 0 {
            return Err(invalid("context dimension must be at least 1"));
        }
        let estimator = match kind {
            PolicyKind::Ucb | PolicyKind::Ts | PolicyKind::Greedy { .. } => {
                Some(Estimator::Ridge(RidgeState::new(dim, confidence.lambda)?))
            }
            PolicyKind::GpUcb | PolicyKind::GpTs => Some(Estimator::Gp(GpState::new(gp)?)),
            PolicyKind::Uniform => None,
        };
        Ok(Self { kind, estimator, confidence, dim, alpha_override: None })
    }

    /// Replaces the confidence radius of the ridge UCB score with a constant.
    pub fn with_alpha_override(mut self, alpha: f64) -> Self {
        self.alpha_override = Some(alpha);
        self
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn estimator(&self) -> Option<&Estimator> {
        self.estimator.as_ref()
    }

    pub fn confidence(&self) -> &ConfidenceParams {
        &self.confidence
    }

    /// Chooses the agent for the current round's item.
    pub fn select<R: Rng + ?Sized>(
        &self,
        goodness: &Goodness,
        ledger: &UtilityLedger,
        contexts: &[Vec<f64>],
        rng: &mut R,
    ) -> Result<AllocationDecision> {
        let n = ledger.n_agents();
        if n == 0 || contexts.is_empty() {
            return Err(invalid("at least one agent is required"));
        }
        if contexts.len() != n {
            return Err(invalid(format!("{} contexts for {n} agents", contexts.len())));
        }
        if ledger.round == 0 {
            return Err(invalid("ledger rounds start at 1"));
        }
        if ledger.round <= n as u64 {
            return Ok(AllocationDecision::unscored(((ledger.round - 1) % n as u64) as usize, true, false));
        }

        let t = ledger.round;
        let scores: Vec<f64> = match (&self.kind, &self.estimator) {
            (PolicyKind::Uniform, _) => {
                return Ok(AllocationDecision::unscored(rng.random_range(0..n), false, false));
            }
            (PolicyKind::Greedy { epsilon }, Some(Estimator::Ridge(ridge))) => {
                if *epsilon > 0.0 && rng.random::<f64>() < *epsilon {
                    return Ok(AllocationDecision::unscored(rng.random_range(0..n), false, true));
                }
                contexts.iter().map(|x| ridge.predict(x)).collect::<Result<_>>()?
            }
            (PolicyKind::Ucb, Some(Estimator::Ridge(ridge))) => {
                let alpha = self.alpha_override.unwrap_or_else(|| self.confidence.alpha(self.dim, t));
                contexts.iter().map(|x| ridge.optimistic(x, alpha)).collect::<Result<_>>()?
            }
            (PolicyKind::Ts, Some(Estimator::Ridge(ridge))) => {
                let theta = ridge.sample_theta(&self.confidence, t, rng)?;
                contexts
                    .iter()
                    .map(|x| {
                        if x.len() != self.dim {
                            return Err(invalid("context dimension mismatch"));
                        }
                        Ok(crate::dot(x, &theta))
                    })
                    .collect::<Result<_>>()?
            }
            (PolicyKind::GpUcb, Some(Estimator::Gp(gp))) => {
                contexts.iter().map(|x| gp.ucb_score(&self.confidence, x)).collect::<Result<_>>()?
            }
            (PolicyKind::GpTs, Some(Estimator::Gp(gp))) => {
                gp.sample_joint(contexts, gp.width(&self.confidence), rng)?
            }
            _ => unreachable!("estimator always matches the policy kind"),
        };

        let clamped: Vec<f64> = scores.iter().map(|s| s.max(0.0)).collect();
        let values = goodness.candidate_values(&ledger.totals, &clamped)?;
        let agent = choose_maximizer(&values, rng);
        Ok(AllocationDecision {
            agent,
            per_agent_scores: scores,
            per_agent_goodness: values,
            was_round_robin: false,
            was_exploration: false,
        })
    }

    /// Books the realized utility and feeds the observation to the estimator.
    pub fn observe(&mut self, x: &[f64], y: f64, ledger: &mut UtilityLedger, agent: usize) -> Result<()> {
        ledger.record(agent, y)?;
        if let Some(estimator) = self.estimator.as_mut() {
            estimator.update(x, y)?;
        }
        Ok(())
    }
}

/// Uniform choice among entries within [`TIE_TOLERANCE`] (relative) of the
/// maximum. Draws from `rng` only when there is an actual tie.
pub fn choose_maximizer<R: Rng + ?Sized>(values: &[f64], rng: &mut R) -> usize {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cutoff = best - TIE_TOLERANCE * best.abs();
    let ties: Vec<usize> = (0..values.len()).filter(|&i| values[i] >= cutoff).collect();
    match ties.len() {
        1 => ties[0],
        k => ties[rng.random_range(0..k)],
    }
}
