//! Command-line front end: experiment presets, ad-hoc runs, config files,
//! CSV and manifest output.
//!
//! Settings come from flags and an optional flat `key = value` file
//! (`--config`); flags win. Keys are the long flag names without the leading
//! `--`, e.g. `item-dim = 2`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::environment::{InstanceParams, ProblemInstance, UtilityKind};
use crate::error::OfdError;
use crate::estimators::ConfidenceParams;
use crate::goodness::{egalitarian_weights, GoodnessSpec};
use crate::policies::PolicyKind;
use crate::simulator::{self, aggregate, run_repetitions, MeanCi, RunConfig, RunTrace};

pub const DEFAULT_REPS: usize = 20;
pub const DEFAULT_RHO: f64 = 0.85;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.csv";

/// ρ grid of the `fig3-rho-sweep` preset.
pub const RHO_GRID: [f64; 20] = [
    0.0, 0.1, 0.2, 0.4, 0.6, 0.8, 0.85, 0.88, 0.89, 0.9, 0.91, 0.92, 0.93, 0.94, 0.95, 0.96, 0.97, 0.98, 0.99, 1.0,
];

pub const PRESET_NAMES: [&str; 8] = [
    "fig1-linear-d4",
    "fig1-linear-d10",
    "fig1-linear-d20",
    "fig1-square",
    "fig2-vary-agents",
    "fig2-vary-dims",
    "fig2b-rho085",
    "fig3-rho-sweep",
];

#[derive(Debug, Parser)]
#[command(name = "ofd", version, about = "Online fair division with contextual bandits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a preset or an ad-hoc configuration and write CSVs plus a manifest.
    Run(RunArgs),
    /// Resolve and check a configuration without running it.
    Validate(RunArgs),
    /// Re-run every configuration recorded in a manifest.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Generate a problem instance and print it as JSON.
    Instance {
        #[arg(long, default_value_t = 10)]
        agents: usize,
        #[arg(long, default_value_t = 2)]
        item_dim: usize,
        #[arg(long, default_value_t = 2)]
        agent_dim: usize,
        #[arg(long, default_value = "linear")]
        utility: UtilityKind,
        #[arg(long, default_value_t = ConfidenceParams::DEFAULT_NOISE_R)]
        noise_r: f64,
        #[arg(long, env = "OFD_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// List the experiment presets.
    Presets,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// One of the names printed by `ofd presets`.
    #[arg(long)]
    pub preset: Option<String>,
    /// Flat `key = value` settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated policies: ucb, ts, gp-ucb, gp-ts, greedy[:eps], uniform.
    #[arg(long)]
    pub policy: Option<String>,
    /// gini (with --rho), esw, usw, nsw, log-nsw or targeted:r1,r2,...
    #[arg(long)]
    pub goodness: Option<String>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub agents: Option<usize>,
    #[arg(long)]
    pub item_dim: Option<usize>,
    #[arg(long)]
    pub agent_dim: Option<usize>,
    /// linear or square.
    #[arg(long)]
    pub utility: Option<String>,
    #[arg(long)]
    pub horizon: Option<u64>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, env = "OFD_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub noise_r: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// File-name prefix of ad-hoc runs.
    #[arg(long)]
    pub name: Option<String>,
    /// Also write summary.csv with final regret and ledger metrics.
    #[arg(long)]
    pub summary: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    UnknownPreset(String),
    Invalid(Vec<String>),
    Output(String),
    Domain(String),
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::UnknownPreset(_) => 2,
            CliError::Output(_) => 3,
            CliError::Domain(_) => 4,
            CliError::Invalid(_) | CliError::Failed(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::UnknownPreset(name) => {
                write!(f, "unknown preset `{name}`; available: {}", PRESET_NAMES.join(", "))
            }
            CliError::Invalid(problems) => {
                writeln!(f, "invalid configuration:")?;
                for p in problems {
                    writeln!(f, "  - {p}")?;
                }
                Ok(())
            }
            CliError::Output(msg) => write!(f, "cannot write output: {msg}"),
            CliError::Domain(msg) => write!(f, "run aborted: {msg}"),
            CliError::Failed(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<OfdError> for CliError {
    fn from(e: OfdError) -> Self {
        match e {
            OfdError::Domain(msg) => CliError::Domain(msg),
            OfdError::Io(msg) => CliError::Output(msg),
            other => CliError::Failed(other.to_string()),
        }
    }
}

/// One configuration of an experiment; repeated `reps` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedRun {
    /// Grid point label, e.g. `n15` or `rho0.9`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub config: RunConfig,
}

impl PlannedRun {
    pub fn file_name(&self, name: &str) -> String {
        match &self.label {
            Some(label) => format!("{name}_{label}_{}.csv", self.config.policy),
            None => format!("{name}_{}.csv", self.config.policy),
        }
    }
}

/// A fully resolved invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub name: String,
    pub reps: usize,
    pub jobs: usize,
    pub out: PathBuf,
    pub summary: bool,
    pub runs: Vec<PlannedRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRun {
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub seeds: Vec<u64>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub reps: usize,
    pub runs: Vec<ManifestRun>,
}

fn instance(n: usize, dm: usize, dn: usize, utility_kind: UtilityKind) -> InstanceParams {
    InstanceParams { n_agents: n, item_dim: dm, agent_dim: dn, utility_kind, noise_r: ConfidenceParams::DEFAULT_NOISE_R }
}

fn base_config(params: InstanceParams, goodness: GoodnessSpec, horizon: u64, policy: PolicyKind) -> RunConfig {
    let mut c = RunConfig::new(params);
    c.goodness = goodness;
    c.horizon = horizon;
    c.policy = policy;
    c
}

fn kinds(names: &[&str]) -> Vec<PolicyKind> {
    names.iter().map(|n| n.parse().expect("built-in policy name")).collect()
}

/// Goodness for a point of the ρ grid; `ρ = 0` is the egalitarian limit.
pub fn rho_goodness(rho: f64, n_agents: usize) -> GoodnessSpec {
    if rho == 0.0 {
        GoodnessSpec::gini_weights(egalitarian_weights(n_agents))
    } else {
        GoodnessSpec::gini_rho(rho)
    }
}

/// Expands a preset into its runs (seed 0, before overrides).
pub fn preset(name: &str) -> Option<Vec<PlannedRun>> {
    let linear = kinds(&["ucb", "ts", "greedy", "uniform"]);
    let bandits = kinds(&["ucb", "ts"]);
    let grid = |points: Vec<(String, InstanceParams, GoodnessSpec, u64)>, policies: &[PolicyKind]| {
        points
            .into_iter()
            .flat_map(|(label, params, goodness, horizon)| {
                policies.iter().map(move |p| PlannedRun {
                    label: Some(label.clone()),
                    config: base_config(params, goodness.clone(), horizon, *p),
                })
            })
            .collect::<Vec<_>>()
    };
    let single = |params: InstanceParams, horizon: u64, policies: &[PolicyKind]| {
        policies
            .iter()
            .map(|p| PlannedRun {
                label: None,
                config: base_config(params, GoodnessSpec::gini_rho(DEFAULT_RHO), horizon, *p),
            })
            .collect::<Vec<_>>()
    };
    let vary_agents = |rho: f64| {
        [5, 10, 15, 20, 25]
            .into_iter()
            .map(|n| (format!("n{n}"), instance(n, 20, 20, UtilityKind::Linear), GoodnessSpec::gini_rho(rho), 1000))
            .collect::<Vec<_>>()
    };
    let vary_dims = |rho: f64| {
        [10, 20, 30, 40, 50]
            .into_iter()
            .map(|d| (format!("d{d}"), instance(10, d / 2, d / 2, UtilityKind::Linear), GoodnessSpec::gini_rho(rho), 1000))
            .collect::<Vec<_>>()
    };
    let runs = match name {
        "fig1-linear-d4" => single(instance(10, 2, 2, UtilityKind::Linear), 10_000, &linear),
        "fig1-linear-d10" => single(instance(10, 5, 5, UtilityKind::Linear), 10_000, &linear),
        "fig1-linear-d20" => single(instance(10, 10, 10, UtilityKind::Linear), 10_000, &linear),
        "fig1-square" => single(instance(10, 2, 2, UtilityKind::Square), 500, &kinds(&["ucb", "ts", "gp-ucb", "gp-ts"])),
        "fig2-vary-agents" => grid(vary_agents(1.0), &bandits),
        "fig2-vary-dims" => grid(vary_dims(1.0), &bandits),
        "fig2b-rho085" => {
            let mut points = vary_agents(DEFAULT_RHO);
            points.extend(vary_dims(DEFAULT_RHO));
            grid(points, &bandits)
        }
        "fig3-rho-sweep" => grid(
            RHO_GRID
                .iter()
                .map(|&rho| (format!("rho{rho}"), instance(10, 20, 20, UtilityKind::Linear), rho_goodness(rho, 10), 1000))
                .collect(),
            &linear,
        ),
        _ => return None,
    };
    Some(runs)
}

/// Parses a flat `key = value` file; `#` starts a comment.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>, Vec<String>> {
    let mut map = BTreeMap::new();
    let mut errors = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => {
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
            None => errors.push(format!("line {}: expected `key = value`, got `{line}`", i + 1)),
        }
    }
    if errors.is_empty() {
        Ok(map)
    } else {
        Err(errors)
    }
}

const CONFIG_KEYS: [&str; 18] = [
    "preset", "policy", "goodness", "rho", "agents", "item-dim", "agent-dim", "utility", "horizon", "reps", "seed",
    "lambda", "noise-r", "delta", "out", "jobs", "name", "summary",
];

/// Fills unset flags from the config file.
fn merge(args: &RunArgs, errors: &mut Vec<String>) -> RunArgs {
    let mut merged = args.clone();
    let Some(path) = &args.config else { return merged };
    let map = match std::fs::read_to_string(path) {
        Ok(text) => match parse_config_file(&text) {
            Ok(map) => map,
            Err(e) => {
                errors.extend(e.into_iter().map(|m| format!("config: {m}")));
                return merged;
            }
        },
        Err(e) => {
            errors.push(format!("config: cannot read {}: {e}", path.display()));
            return merged;
        }
    };
    for key in map.keys().filter(|k| !CONFIG_KEYS.contains(&k.as_str())) {
        errors.push(format!("{key}: unknown config key"));
    }
    fn fill<T: std::str::FromStr>(slot: &mut Option<T>, key: &str, map: &BTreeMap<String, String>, errors: &mut Vec<String>)
    where
        T::Err: fmt::Display,
    {
        if slot.is_some() {
            return;
        }
        if let Some(v) = map.get(key) {
            match v.parse() {
                Ok(x) => *slot = Some(x),
                Err(e) => errors.push(format!("{key}: cannot parse `{v}`: {e}")),
            }
        }
    }
    fill(&mut merged.preset, "preset", &map, errors);
    fill(&mut merged.policy, "policy", &map, errors);
    fill(&mut merged.goodness, "goodness", &map, errors);
    fill(&mut merged.rho, "rho", &map, errors);
    fill(&mut merged.agents, "agents", &map, errors);
    fill(&mut merged.item_dim, "item-dim", &map, errors);
    fill(&mut merged.agent_dim, "agent-dim", &map, errors);
    fill(&mut merged.utility, "utility", &map, errors);
    fill(&mut merged.horizon, "horizon", &map, errors);
    fill(&mut merged.reps, "reps", &map, errors);
    fill(&mut merged.seed, "seed", &map, errors);
    fill(&mut merged.lambda, "lambda", &map, errors);
    fill(&mut merged.noise_r, "noise-r", &map, errors);
    fill(&mut merged.delta, "delta", &map, errors);
    fill(&mut merged.out, "out", &map, errors);
    fill(&mut merged.jobs, "jobs", &map, errors);
    fill(&mut merged.name, "name", &map, errors);
    if !merged.summary {
        let mut summary = None;
        fill(&mut summary, "summary", &map, errors);
        merged.summary = summary.unwrap_or(false);
    }
    merged
}

/// Parses a goodness name; `rho` applies to `gini`.
pub fn parse_goodness(name: &str, rho: Option<f64>, n_agents: usize) -> Result<GoodnessSpec, String> {
    Ok(match name {
        "gini" => GoodnessSpec::gini_rho(rho.unwrap_or(DEFAULT_RHO)),
        "esw" => GoodnessSpec::gini_weights(egalitarian_weights(n_agents)),
        "usw" => GoodnessSpec::gini_rho(1.0),
        "nsw" => GoodnessSpec::Nsw,
        "log-nsw" => GoodnessSpec::LogNsw,
        other => match other.strip_prefix("targeted:") {
            Some(list) => GoodnessSpec::TargetedWeights {
                target_ratios: list
                    .split(',')
                    .map(|x| x.trim().parse::<f64>().map_err(|e| format!("bad target ratio `{x}`: {e}")))
                    .collect::<Result<_, _>>()?,
            },
            None => return Err(format!("unknown goodness `{other}` (gini | esw | usw | nsw | log-nsw | targeted:r1,r2,..)")),
        },
    })
}

fn parse_policies(list: &str, errors: &mut Vec<String>) -> Vec<PolicyKind> {
    list.split(',')
        .filter_map(|p| match p.trim().parse::<PolicyKind>() {
            Ok(k) => Some(k),
            Err(e) => {
                errors.push(format!("policy: {e}"));
                None
            }
        })
        .collect()
}

fn apply_confidence(config: &mut RunConfig, a: &RunArgs) {
    let mut confidence = ConfidenceParams::for_dim(config.instance.dim());
    confidence.noise_r = a.noise_r.unwrap_or(ConfidenceParams::DEFAULT_NOISE_R);
    if let Some(l) = a.lambda {
        confidence.lambda = l;
    }
    if let Some(d) = a.delta {
        confidence.delta = d;
    }
    config.instance.noise_r = confidence.noise_r;
    config.confidence = confidence;
}

/// Resolves flags plus config file into a plan, or reports every rejected
/// field.
pub fn resolve(args: &RunArgs) -> Result<Plan, CliError> {
    let mut errors = Vec::new();
    let a = merge(args, &mut errors);
    let policies = a.policy.as_deref().map(|p| parse_policies(p, &mut errors));
    let seed = a.seed.unwrap_or(0);

    let (name, mut runs) = if let Some(preset_name) = &a.preset {
        let Some(mut runs) = preset(preset_name) else {
            return Err(CliError::UnknownPreset(preset_name.clone()));
        };
        let shape = [
            ("goodness", a.goodness.is_some()),
            ("rho", a.rho.is_some()),
            ("agents", a.agents.is_some()),
            ("item-dim", a.item_dim.is_some()),
            ("agent-dim", a.agent_dim.is_some()),
            ("utility", a.utility.is_some()),
        ];
        for (flag, set) in shape {
            if set {
                errors.push(format!("{flag}: fixed by preset `{preset_name}`"));
            }
        }
        if let Some(policies) = &policies {
            let mut labels: Vec<Option<String>> = Vec::new();
            for r in &runs {
                if !labels.contains(&r.label) {
                    labels.push(r.label.clone());
                }
            }
            runs = labels
                .into_iter()
                .flat_map(|label| {
                    let template = runs.iter().find(|r| r.label == label).expect("label taken from runs").clone();
                    policies.iter().map(move |p| {
                        let mut r = template.clone();
                        r.config.policy = *p;
                        r
                    })
                })
                .collect();
        }
        (preset_name.clone(), runs)
    } else {
        let n = a.agents.unwrap_or(10);
        let utility_kind = match a.utility.as_deref().map(str::parse::<UtilityKind>).transpose() {
            Ok(k) => k.unwrap_or(UtilityKind::Linear),
            Err(e) => {
                errors.push(format!("utility: {e}"));
                UtilityKind::Linear
            }
        };
        let goodness = match parse_goodness(a.goodness.as_deref().unwrap_or("gini"), a.rho, n) {
            Ok(g) => g,
            Err(e) => {
                errors.push(format!("goodness: {e}"));
                GoodnessSpec::gini_rho(DEFAULT_RHO)
            }
        };
        let params = instance(n, a.item_dim.unwrap_or(2), a.agent_dim.unwrap_or(2), utility_kind);
        let runs = policies
            .clone()
            .unwrap_or_else(|| vec![PolicyKind::Ucb])
            .into_iter()
            .map(|p| PlannedRun { label: None, config: base_config(params, goodness.clone(), 10_000, p) })
            .collect();
        (a.name.clone().unwrap_or_else(|| "run".into()), runs)
    };

    for r in &mut runs {
        r.config.seed = seed;
        if let Some(h) = a.horizon {
            r.config.horizon = h;
        }
        apply_confidence(&mut r.config, &a);
    }
    for r in &runs {
        let prefix = r.label.as_deref().map(|l| format!("[{l} {}] ", r.config.policy)).unwrap_or_default();
        for p in r.config.problems() {
            let msg = format!("{prefix}{p}");
            if !errors.contains(&msg) {
                errors.push(msg);
            }
        }
    }
    let reps = a.reps.unwrap_or(DEFAULT_REPS);
    if reps == 0 {
        errors.push("reps: at least one repetition is required".into());
    }
    if a.jobs == Some(0) {
        errors.push("jobs: at least one worker is required".into());
    }
    if !errors.is_empty() {
        return Err(CliError::Invalid(errors));
    }
    Ok(Plan {
        name,
        reps,
        jobs: a.jobs.unwrap_or_else(default_jobs),
        out: a.out.unwrap_or_else(|| PathBuf::from("results")),
        summary: a.summary,
        runs,
    })
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn summary_row(trace_set: &[RunTrace]) -> Result<[MeanCi; 4], OfdError> {
    if let [t] = trace_set {
        let point = |x| MeanCi { mean: x, ci95: 0.0 };
        return Ok([point(t.final_regret()), point(t.metrics.usw), point(t.metrics.gini), point(t.metrics.min_ratio)]);
    }
    let a = aggregate(trace_set)?;
    Ok([a.final_regret(), a.usw, a.gini, a.min_ratio])
}

fn output_error(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::Output(format!("{}: {e}", path.display()))
}

/// Executes a plan: one CSV per run, `manifest.json`, and optionally
/// `summary.csv`. Progress goes to stderr.
pub fn execute(plan: &Plan) -> Result<Manifest, CliError> {
    std::fs::create_dir_all(&plan.out).map_err(|e| output_error(&plan.out, e))?;
    let mut manifest = Manifest { name: plan.name.clone(), reps: plan.reps, runs: Vec::new() };
    let mut summary = plan.summary.then(|| csv::Writer::from_writer(Vec::new()));
    if let Some(w) = summary.as_mut() {
        w.write_record([
            "file", "policy", "reps", "final_regret", "final_regret_ci95", "usw", "usw_ci95", "gini", "gini_ci95",
            "min_ratio", "min_ratio_ci95",
        ])
        .map_err(|e| CliError::Failed(e.to_string()))?;
    }
    for run in &plan.runs {
        let file = run.file_name(&plan.name);
        let traces = run_repetitions(&run.config, plan.reps, plan.jobs)?;
        let path = plan.out.join(&file);
        simulator::write_series_csv(&path, &traces).map_err(|e| output_error(&path, e))?;
        let row = summary_row(&traces)?;
        eprintln!("{file}: final regret {:.4} ± {:.4}", row[0].mean, row[0].ci95);
        if let Some(w) = summary.as_mut() {
            let mut record = vec![file.clone(), run.config.policy.to_string(), plan.reps.to_string()];
            for m in row {
                record.push(m.mean.to_string());
                record.push(m.ci95.to_string());
            }
            w.write_record(&record).map_err(|e| CliError::Failed(e.to_string()))?;
        }
        manifest.runs.push(ManifestRun {
            file,
            label: run.label.clone(),
            seeds: (0..plan.reps as u64).map(|r| run.config.seed.wrapping_add(r)).collect(),
            config: run.config.clone(),
        });
    }
    let manifest_path = plan.out.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Failed(e.to_string()))?;
    std::fs::write(&manifest_path, json + "\n").map_err(|e| output_error(&manifest_path, e))?;
    if let Some(w) = summary {
        let bytes = w.into_inner().map_err(|e| CliError::Failed(e.to_string()))?;
        let path = plan.out.join(SUMMARY_FILE);
        std::fs::write(&path, bytes).map_err(|e| output_error(&path, e))?;
    }
    Ok(manifest)
}

/// Rebuilds the plan recorded in a manifest.
pub fn plan_from_manifest(manifest: &Manifest, out: PathBuf, jobs: usize) -> Result<Plan, CliError> {
    let mut runs = Vec::with_capacity(manifest.runs.len());
    for r in &manifest.runs {
        let planned = PlannedRun { label: r.label.clone(), config: r.config.clone() };
        if planned.file_name(&manifest.name) != r.file {
            return Err(CliError::Failed(format!("manifest entry `{}` does not match its configuration", r.file)));
        }
        let expected: Vec<u64> = (0..manifest.reps as u64).map(|k| r.config.seed.wrapping_add(k)).collect();
        if r.seeds != expected {
            return Err(CliError::Failed(format!("manifest entry `{}` has non-consecutive seeds", r.file)));
        }
        runs.push(planned);
    }
    Ok(Plan { name: manifest.name.clone(), reps: manifest.reps, jobs, out, summary: false, runs })
}

fn validate_report(args: &RunArgs) -> Result<String, CliError> {
    let plan = resolve(args)?;
    let configs: Vec<&PlannedRun> = plan.runs.iter().collect();
    serde_json::to_string_pretty(&configs).map_err(|e| CliError::Failed(e.to_string()))
}

/// Runs the parsed command; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Run(args) => resolve(&args).and_then(|plan| execute(&plan)).map(|_| ()),
        Command::Validate(args) => validate_report(&args).map(|report| println!("{report}")),
        Command::Replay { manifest, out, jobs } => std::fs::read_to_string(&manifest)
            .map_err(|e| CliError::Failed(format!("cannot read {}: {e}", manifest.display())))
            .and_then(|text| serde_json::from_str::<Manifest>(&text).map_err(|e| CliError::Failed(e.to_string())))
            .and_then(|m| plan_from_manifest(&m, out, jobs.unwrap_or_else(default_jobs)))
            .and_then(|plan| execute(&plan))
            .map(|_| ()),
        Command::Instance { agents, item_dim, agent_dim, utility, noise_r, seed } => {
            let params = InstanceParams { n_agents: agents, item_dim, agent_dim, utility_kind: utility, noise_r };
            let mut rng = simulator::rng_stream(seed, 0);
            ProblemInstance::generate(&params, &mut rng)
                .and_then(|inst| inst.to_json())
                .map(|json| println!("{json}"))
                .map_err(CliError::from)
        }
        Command::Presets => {
            for name in PRESET_NAMES {
                let runs = preset(name).expect("registered preset");
                println!("{name}: {} runs", runs.len());
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
