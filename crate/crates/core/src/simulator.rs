//! Run loop wiring environment, policy and goodness together; regret
//! accounting against the per-round oracle; aggregation over repetitions.
//!
//! Each run splits its seed into four independent ChaCha streams (instance,
//! items, noise, policy), so runs of different policies with the same seed
//! see the same instance and item sequence.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{InstanceParams, ItemContexts, OracleView, ProblemInstance};
use crate::error::{invalid, OfdError, Result};
use crate::estimators::{ConfidenceParams, GpParams};
use crate::goodness::GoodnessSpec;
use crate::policies::{AllocationDecision, Policy, PolicyKind, UtilityLedger};

/// Upper limit on the horizon of a single run.
pub const MAX_HORIZON: u64 = 1_000_000;

/// Normal quantile used for the 95% confidence half-width.
pub const Z95: f64 = 1.96;

const STREAM_INSTANCE: u64 = 0;
const STREAM_ITEMS: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_POLICY: u64 = 3;

/// Random stream `stream` of the run seeded by `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub horizon: u64,
    pub seed: u64,
    pub policy: PolicyKind,
    pub goodness: GoodnessSpec,
    pub instance: InstanceParams,
    pub confidence: ConfidenceParams,
    /// GP hyperparameters; defaults from the context dimension when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gp: Option<GpParams>,
}

impl RunConfig {
    /// Defaults for everything but the instance shape: `T = 10⁴`, `ρ = 0.85`,
    /// OFD-UCB and the confidence constants for the context dimension.
    pub fn new(instance: InstanceParams) -> Self {
        let mut confidence = ConfidenceParams::for_dim(instance.dim());
        confidence.noise_r = instance.noise_r;
        Self {
            horizon: 10_000,
            seed: 0,
            policy: PolicyKind::Ucb,
            goodness: GoodnessSpec::gini_rho(0.85),
            instance,
            confidence,
            gp: None,
        }
    }

    pub fn gp_params(&self) -> GpParams {
        self.gp.unwrap_or_else(|| GpParams::for_dim(self.instance.dim(), self.confidence.noise_r))
    }

    /// Every rejected field with its reason; empty when the config is valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |field: &str, r: Result<()>| {
            if let Err(e) = r {
                out.push(format!("{field}: {e}"));
            }
        };
        check("instance", self.instance.validate());
        check("confidence", self.confidence.validate());
        check("policy", self.policy.validate());
        if self.instance.n_agents > 0 {
            check("goodness", self.goodness.resolve(self.instance.n_agents).map(|_| ()));
        }
        if let Some(gp) = &self.gp {
            check("gp", gp.validate());
        }
        if self.horizon < self.instance.n_agents as u64 {
            out.push(format!(
                "horizon: {} rounds cannot complete the round-robin warm start over {} agents (need T >= N)",
                self.horizon, self.instance.n_agents
            ));
        }
        if self.horizon > MAX_HORIZON {
            out.push(format!("horizon: {} exceeds the limit of {MAX_HORIZON}", self.horizon));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(invalid(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: u64,
    pub chosen: usize,
    pub oracle: usize,
    pub y: f64,
    pub inst_regret: f64,
    pub cum_regret: f64,
}

/// Fairness and efficiency of a final ledger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerMetrics {
    /// Total realized utility.
    pub usw: f64,
    pub gini: f64,
    pub min_ratio: f64,
}

impl LedgerMetrics {
    pub fn from_totals(totals: &[f64]) -> Result<Self> {
        Ok(Self { usw: totals.iter().sum(), gini: gini_coefficient(totals)?, min_ratio: min_ratio(totals)? })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub config: RunConfig,
    pub records: Vec<RoundRecord>,
    pub final_totals: Vec<f64>,
    pub final_counts: Vec<u64>,
    pub metrics: LedgerMetrics,
}

impl RunTrace {
    pub fn final_regret(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cum_regret)
    }

    pub fn cumulative_regret(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.cum_regret).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Everything visible at one round, handed to a run inspector before the
/// policy observes the outcome.
pub struct RoundView<'a> {
    pub t: u64,
    pub instance: &'a ProblemInstance,
    pub totals: &'a [f64],
    pub contexts: &'a ItemContexts,
    pub oracle: &'a OracleView,
    pub decision: &'a AllocationDecision,
    pub y: f64,
    pub policy: &'a Policy,
}

pub fn generate_instance(config: &RunConfig) -> Result<ProblemInstance> {
    ProblemInstance::generate(&config.instance, &mut rng_stream(config.seed, STREAM_INSTANCE))
}

/// Runs `config` on its seeded instance.
pub fn run_single(config: &RunConfig) -> Result<RunTrace> {
    run_inspected(config, |_| {})
}

pub fn run_inspected(config: &RunConfig, inspect: impl FnMut(&RoundView<'_>)) -> Result<RunTrace> {
    config.validate()?;
    let instance = generate_instance(config)?;
    run_on_instance(config, &instance, inspect)
}

/// Runs `config` on a given instance, which must match the config's shape.
///
/// Regret evaluates both candidates with the true utilities on the realized
/// ledger, which itself accumulates the noisy observations. Under the Nash
/// variants the ledger is not in the domain until every agent has received
/// an item, so warm-start rounds whose ledger still has a non-positive entry
/// count as zero regret.
pub fn run_on_instance(
    config: &RunConfig,
    instance: &ProblemInstance,
    mut inspect: impl FnMut(&RoundView<'_>),
) -> Result<RunTrace> {
    config.validate()?;
    instance.validate()?;
    if instance.params() != config.instance {
        return Err(invalid("instance does not match the configured instance parameters"));
    }
    let n = instance.n_agents;
    let goodness = config.goodness.resolve(n)?;
    let mut policy = Policy::new(config.policy, instance.dim(), config.confidence, config.gp_params())?;
    let mut ledger = UtilityLedger::new(n);
    let mut item_rng = rng_stream(config.seed, STREAM_ITEMS);
    let mut noise_rng = rng_stream(config.seed, STREAM_NOISE);
    let mut policy_rng = rng_stream(config.seed, STREAM_POLICY);

    let mut records = Vec::with_capacity(config.horizon as usize);
    let mut cum_regret = 0.0;
    for t in 1..=config.horizon {
        let contexts = instance.draw_item(&mut item_rng);
        let decision = policy.select(&goodness, &ledger, &contexts.per_agent, &mut policy_rng)?;
        let warm_outside_domain =
            decision.was_round_robin && goodness.requires_positive() && ledger.totals.iter().any(|u| *u <= 0.0);
        let oracle = if warm_outside_domain {
            let utilities: Vec<f64> = contexts.per_agent.iter().map(|x| instance.true_utility(x)).collect();
            OracleView { agent: decision.agent, values: vec![0.0; n], utilities }
        } else {
            instance.oracle(&goodness, &ledger.totals, &contexts).map_err(|e| match e {
                OfdError::Domain(msg) => OfdError::Domain(format!(
                    "round {t}, totals {:?}: {msg}",
                    ledger.totals
                )),
                other => other,
            })?
        };
        let inst_regret = oracle.values[oracle.agent] - oracle.values[decision.agent];
        debug_assert!(inst_regret >= 0.0);
        cum_regret += inst_regret;

        let x = &contexts.per_agent[decision.agent];
        let y = instance.sample_utility(x, &mut noise_rng);
        inspect(&RoundView {
            t,
            instance,
            totals: &ledger.totals,
            contexts: &contexts,
            oracle: &oracle,
            decision: &decision,
            y,
            policy: &policy,
        });
        policy.observe(x, y, &mut ledger, decision.agent)?;
        records.push(RoundRecord { t, chosen: decision.agent, oracle: oracle.agent, y, inst_regret, cum_regret });
    }

    let metrics = LedgerMetrics::from_totals(&ledger.totals)?;
    Ok(RunTrace {
        config: config.clone(),
        records,
        final_totals: ledger.totals,
        final_counts: ledger.counts,
        metrics,
    })
}

/// Runs repetitions `0..reps` with seeds `config.seed + rep` on a pool of
/// `jobs` threads. The output order and content do not depend on `jobs`.
pub fn run_repetitions(config: &RunConfig, reps: usize, jobs: usize) -> Result<Vec<RunTrace>> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| OfdError::Io(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        (0..reps as u64)
            .into_par_iter()
            .map(|rep| {
                let mut c = config.clone();
                c.seed = config.seed.wrapping_add(rep);
                run_single(&c)
            })
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub ci95: f64,
}

impl MeanCi {
    /// Mean and `1.96 · s / √n` with the sample standard deviation `s`.
    pub fn of(xs: &[f64]) -> Result<Self> {
        if xs.len() < 2 {
            return Err(invalid("a confidence interval needs at least two samples"));
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Ok(Self { mean, ci95: Z95 * var.sqrt() / n.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateSeries {
    pub reps: usize,
    pub mean_regret: Vec<f64>,
    pub ci95: Vec<f64>,
    pub usw: MeanCi,
    pub gini: MeanCi,
    pub min_ratio: MeanCi,
}

impl AggregateSeries {
    pub fn final_regret(&self) -> MeanCi {
        MeanCi { mean: *self.mean_regret.last().unwrap_or(&0.0), ci95: *self.ci95.last().unwrap_or(&0.0) }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "mean_regret", "ci95"])?;
        for (i, (m, c)) in self.mean_regret.iter().zip(&self.ci95).enumerate() {
            w.write_record([(i + 1).to_string(), m.to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-round mean cumulative regret with 95% half-widths, plus final ledger
/// metrics, over at least two traces of equal horizon.
pub fn aggregate(traces: &[RunTrace]) -> Result<AggregateSeries> {
    if traces.len() < 2 {
        return Err(invalid(format!("aggregation needs at least two traces, got {}", traces.len())));
    }
    let horizon = traces[0].records.len();
    if let Some(t) = traces.iter().find(|t| t.records.len() != horizon) {
        return Err(OfdError::HorizonMismatch { expected: horizon, found: t.records.len() });
    }
    let mut mean_regret = Vec::with_capacity(horizon);
    let mut ci95 = Vec::with_capacity(horizon);
    let mut column = vec![0.0; traces.len()];
    for i in 0..horizon {
        for (c, trace) in column.iter_mut().zip(traces) {
            *c = trace.records[i].cum_regret;
        }
        let s = MeanCi::of(&column)?;
        mean_regret.push(s.mean);
        ci95.push(s.ci95);
    }
    let metric = |f: fn(&LedgerMetrics) -> f64| {
        MeanCi::of(&traces.iter().map(|t| f(&t.metrics)).collect::<Vec<_>>())
    };
    Ok(AggregateSeries {
        reps: traces.len(),
        mean_regret,
        ci95,
        usw: metric(|m| m.usw)?,
        gini: metric(|m| m.gini)?,
        min_ratio: metric(|m| m.min_ratio)?,
    })
}

fn check_metric_input(u: &[f64]) -> Result<f64> {
    if u.is_empty() {
        return Err(invalid("utility vector is empty"));
    }
    if u.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(OfdError::Domain("utilities must be finite and non-negative".into()));
    }
    let total: f64 = u.iter().sum();
    if total <= 0.0 {
        return Err(OfdError::Domain("total utility is zero".into()));
    }
    Ok(total)
}

/// Relative mean absolute difference `Σᵢ Σⱼ |uᵢ − uⱼ| / (2 N² ū)`.
pub fn gini_coefficient(u: &[f64]) -> Result<f64> {
    let total = check_metric_input(u)?;
    let n = u.len() as f64;
    let mut sorted = u.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Σᵢ Σⱼ |uᵢ − uⱼ| = 2 Σ_k (2k − N + 1) u_(k) over the ascending order.
    let pairwise: f64 = sorted.iter().enumerate().map(|(k, x)| (2.0 * k as f64 - n + 1.0) * x).sum::<f64>() * 2.0;
    Ok((pairwise / (2.0 * n * total)).clamp(0.0, 1.0))
}

/// `min(u) / Σ u`.
pub fn min_ratio(u: &[f64]) -> Result<f64> {
    let total = check_metric_input(u)?;
    Ok(u.iter().copied().fold(f64::INFINITY, f64::min) / total)
}

/// Regret bound `2 α_t w_max √(2 d t log(λ + t L / d))`; the logarithm is
/// floored at zero.
pub fn theoretical_bound(params: &ConfidenceParams, d: usize, w_max: f64, t: u64) -> f64 {
    let (df, tf) = (d as f64, t.max(1) as f64);
    let log_term = (params.lambda + tf * params.feature_bound_l / df).ln().max(0.0);
    2.0 * params.alpha(d, t.max(1)) * w_max * (2.0 * df * tf * log_term).sqrt()
}

/// Writes the aggregate series, or the single trace when `traces` has one
/// element, to `path`.
pub fn write_series_csv(path: &Path, traces: &[RunTrace]) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    match traces {
        [single] => single.write_csv(file),
        _ => aggregate(traces)?.write_csv(file),
    }
}
