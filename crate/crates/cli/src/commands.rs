//! The five commands. Each validates its whole input before writing
//! anything, and is deterministic given the config and seed.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use asterlab_core::agent::{infer_preference, one_hot, uniform_preference};
use asterlab_core::baselines::{read_scores_csv, ScoreTable};
use asterlab_core::data::{
    aggregate, classify_resource_level, read_coords_csv, read_events_csv, synthesize, AggregateStats, Dataset,
    NormStats, Regions, Span, Split, Splits,
};
use asterlab_core::env::RewardVector;
use asterlab_core::metrics::{weekly_report, MetricSet, WeeklyReport};
use asterlab_core::rollout::{rollout, Policy, Rollout, RolloutConfig};
use asterlab_core::trainer::{write_log_csv, EpochSummary, TrainConfig, TrainedModel, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, Objective, RunConfig};
use crate::InputError;

pub const DATASET_FILE: &str = "dataset.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MODEL_FILE: &str = "model.ckpt";
pub const TRAIN_STATE_FILE: &str = "train_state.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const WEEKLY_FILE: &str = "weekly.csv";
pub const REPORT_FILE: &str = "report.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const INFERRED_FILE: &str = "inferred.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    HistoricalAverage,
    Random,
    Oracle,
}

impl FromStr for Baseline {
    type Err = InputError;

    fn from_str(s: &str) -> Result<Self, InputError> {
        match s {
            "ha" => Ok(Baseline::HistoricalAverage),
            "random" => Ok(Baseline::Random),
            "oracle" => Ok(Baseline::Oracle),
            other => Err(InputError(format!("unknown baseline '{other}' (expected ha, random or oracle)"))),
        }
    }
}

/// What drives the allocations in `evaluate` and `simulate`.
#[derive(Clone, Debug, PartialEq)]
pub enum PolicySource {
    Checkpoint(PathBuf),
    Baseline(Baseline),
    Scores(PathBuf),
}

enum Loaded {
    Model(Box<TrainedModel>),
    Baseline(Baseline),
    Scores(ScoreTable),
}

impl Loaded {
    fn policy(&self, omega: Vec<f64>) -> Policy<'_> {
        match self {
            Loaded::Model(m) => m.policy(omega, 0.0),
            Loaded::Baseline(Baseline::HistoricalAverage) => Policy::HistoricalAverage,
            Loaded::Baseline(Baseline::Random) => Policy::Random,
            Loaded::Baseline(Baseline::Oracle) => Policy::Oracle,
            Loaded::Scores(t) => Policy::Scores(t),
        }
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(InputError(format!("{what} not found: {}", path.display())).into());
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_out(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))
}

/// Loads the configured dataset, normalised.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match cfg.source() {
        DataSource::Archive(path) => {
            require_file(&path, "dataset archive")?;
            let text = fs::read_to_string(&path)?;
            let archive: Dataset = serde_json::from_str(&text)
                .map_err(|e| InputError(format!("{}: not a dataset archive: {e}", path.display())))?;
            if archive.norm.is_none() {
                return Err(InputError(format!("{}: archive has no normalisation stats", path.display())).into());
            }
            Ok(archive)
        }
        DataSource::Synthetic {
            pattern,
            nodes,
            steps,
            seed,
        } => {
            let (mut d, _) = synthesize(seed, nodes, steps, pattern)?;
            d.normalize()?;
            Ok(d)
        }
    }
}

/// Resource count for this run and its level label.
pub fn resources(cfg: &RunConfig, dataset: &Dataset) -> (usize, String) {
    match cfg.resources {
        Some(s) => {
            let level = classify_resource_level(s, dataset.demand_estimate(), &cfg.levels);
            (s, level.to_string())
        }
        None => (
            cfg.levels.resources_for(cfg.resource_level, dataset.demand_estimate()),
            cfg.resource_level.to_string(),
        ),
    }
}

/// The training config with resources and seed filled in.
pub fn train_config(cfg: &RunConfig, dataset: &Dataset) -> TrainConfig {
    let mut t = cfg.train.clone();
    t.env.total_resources = resources(cfg, dataset).0;
    t.seed = cfg.seed;
    t.model.nodes = dataset.nodes;
    t
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub nodes: usize,
    pub steps: usize,
    pub start_timestamp: i64,
    pub interval_secs: i64,
    pub records: usize,
    pub ingested_events: u64,
    pub dropped_records: usize,
    pub dropped_events: u64,
    pub splits: Splits,
    pub norm: NormStats,
}

/// Aggregates raw events onto the coordinate nodes, normalises, and writes
/// the dataset archive plus a manifest into `cfg.out`.
pub fn ingest(cfg: &RunConfig, events: &Path, coords: &Path) -> Result<Manifest> {
    if cfg.interval_secs <= 0 {
        return Err(InputError("interval_secs must be positive".into()).into());
    }
    require_file(events, "events CSV")?;
    require_file(coords, "coordinates CSV")?;
    let nodes = read_coords_csv(coords)?;
    let records = read_events_csv(events)?;
    let (min, max) = records
        .iter()
        .map(|r| r.timestamp)
        .fold(None, |acc: Option<(i64, i64)>, t| {
            Some(acc.map_or((t, t), |(lo, hi)| (lo.min(t), hi.max(t))))
        })
        .ok_or_else(|| InputError(format!("{}: no event rows", events.display())))?;
    let interval = cfg.interval_secs;
    let start = min.div_euclid(interval) * interval;
    let span = Span {
        start,
        interval,
        steps: ((max - start) / interval + 1) as usize,
    };
    let (mut dataset, stats): (Dataset, AggregateStats) = aggregate(&records, &Regions::Nodes(nodes), span)?;
    let norm = dataset.normalize()?;
    let manifest = Manifest {
        nodes: dataset.nodes,
        steps: dataset.steps,
        start_timestamp: dataset.start_timestamp,
        interval_secs: dataset.interval_secs,
        records: stats.records,
        ingested_events: stats.ingested_events,
        dropped_records: stats.dropped_records,
        dropped_events: stats.dropped_events,
        splits: dataset.splits,
        norm,
    };
    create_out(cfg)?;
    write_json(&cfg.out.join(DATASET_FILE), &dataset)?;
    write_json(&cfg.out.join(MANIFEST_FILE), &manifest)?;
    log::info!(
        "ingested {} records into {} steps x {} nodes",
        manifest.records,
        manifest.steps,
        manifest.nodes
    );
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub seed: u64,
    pub nodes: usize,
    pub steps: usize,
    pub resources: usize,
    pub resource_level: String,
    pub log_rows: usize,
    pub final_forecast_loss: f64,
    pub final_agent_loss: Option<f64>,
    pub epochs: Vec<EpochSummary>,
    /// Epoch of the saved model, chosen by validation reward.
    pub best_epoch: Option<usize>,
    pub validation_metrics: Option<MetricSet>,
}

/// Trains from scratch, or continues `resume` when given, and writes the
/// best model, the training state, the log and a summary.
pub fn train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainSummary> {
    cfg.validate()?;
    if let Some(p) = resume {
        require_file(p, "training checkpoint")?;
    }
    let dataset = load_dataset(cfg)?;
    let tc = train_config(cfg, &dataset);
    let mut trainer = match resume {
        Some(p) => {
            let t = Trainer::load(p)?;
            if t.config != tc {
                return Err(InputError(format!("{}: checkpoint was trained under a different config", p.display())).into());
            }
            t
        }
        None => Trainer::new(tc, &dataset).map_err(|e| InputError(e.to_string()))?,
    };
    let (s, level) = resources(cfg, &dataset);
    log::info!("training on {} nodes x {} steps with {s} resources ({level})", dataset.nodes, dataset.steps);
    trainer.run(&dataset)?;
    let best = trainer.best.as_ref().map(|(_, m)| m);
    let summary = TrainSummary {
        seed: cfg.seed,
        nodes: dataset.nodes,
        steps: dataset.steps,
        resources: s,
        resource_level: level,
        log_rows: trainer.log.len(),
        final_forecast_loss: trainer.epochs.last().map_or(f64::NAN, |e| e.forecast_loss),
        final_agent_loss: trainer.log.iter().rev().find_map(|r| r.agent_loss),
        epochs: trainer.epochs.clone(),
        best_epoch: best.and_then(|m| m.epoch),
        validation_metrics: best
            .and_then(|m| m.epoch)
            .and_then(|e| trainer.epochs.iter().find(|s| s.epoch == e))
            .map(|s| s.validation_metrics),
    };
    create_out(cfg)?;
    trainer.best_model().save(&cfg.out.join(MODEL_FILE))?;
    trainer.save(&cfg.out.join(TRAIN_STATE_FILE))?;
    write_log_csv(&trainer.log, fs::File::create(cfg.out.join(TRAIN_LOG_FILE))?)?;
    write_json(&cfg.out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub trials: usize,
    pub seed: u64,
    pub resources: usize,
    pub resource_level: String,
    pub steps_per_week: usize,
    pub test_steps: usize,
    /// Per-window metrics averaged over trials.
    pub windows: Vec<MetricSet>,
    pub mean: MetricSet,
    pub per_trial: Vec<MetricSet>,
}

struct Prepared {
    dataset: Dataset,
    loaded: Loaded,
    rollout: RolloutConfig,
    level: String,
    omega: Vec<f64>,
}

fn prepare(cfg: &RunConfig, source: &PolicySource) -> Result<Prepared> {
    cfg.validate()?;
    match source {
        PolicySource::Checkpoint(p) => require_file(p, "checkpoint")?,
        PolicySource::Scores(p) => require_file(p, "scores CSV")?,
        PolicySource::Baseline(_) => {}
    }
    let dataset = load_dataset(cfg)?;
    let (s, level) = resources(cfg, &dataset);
    let mut env = cfg.train.env.clone();
    env.total_resources = s;
    let (loaded, history, k_max) = match source {
        PolicySource::Checkpoint(p) => {
            let m = TrainedModel::load(p)?;
            if m.forecaster.config.nodes != dataset.nodes {
                return Err(InputError(format!(
                    "checkpoint expects {} nodes, dataset has {}",
                    m.forecaster.config.nodes, dataset.nodes
                ))
                .into());
            }
            let (h, k) = (m.history, m.forecaster.config.k_max);
            (Loaded::Model(Box::new(m)), h, k)
        }
        PolicySource::Baseline(b) => (Loaded::Baseline(*b), cfg.train.history, cfg.train.model.k_max),
        PolicySource::Scores(p) => {
            let k = cfg.train.model.k_max;
            (Loaded::Scores(read_scores_csv(p, dataset.nodes, k)?), cfg.train.history, k)
        }
    };
    env.validate(k_max).map_err(|e| InputError(e.to_string()))?;
    let omega = cfg
        .preference
        .clone()
        .unwrap_or_else(|| uniform_preference(cfg.train.agent.objectives()));
    Ok(Prepared {
        dataset,
        loaded,
        rollout: RolloutConfig {
            env,
            history,
            k_max,
            env_seed: cfg.seed,
            budget_cap: cfg.budget_cap,
        },
        level,
        omega,
    })
}

fn run_trial(p: &Prepared, anchors: std::ops::Range<usize>, seed: u64) -> Result<Rollout> {
    let rc = RolloutConfig {
        env_seed: seed,
        ..p.rollout.clone()
    };
    let policy = p.loaded.policy(p.omega.clone());
    Ok(rollout(&p.dataset, anchors, &policy, &rc, &mut ChaCha8Rng::seed_from_u64(seed))?)
}

fn nonempty(anchors: std::ops::Range<usize>, what: &str) -> Result<std::ops::Range<usize>> {
    if anchors.is_empty() {
        return Err(InputError(format!("the {what} range has no complete windows")).into());
    }
    Ok(anchors)
}

/// Rolls the policy over the test split `trials` times (trial `i` seeded
/// with `seed + i`) and writes weekly and mean metrics.
pub fn evaluate(cfg: &RunConfig, source: &PolicySource) -> Result<EvalReport> {
    let p = prepare(cfg, source)?;
    let anchors = nonempty(
        p.dataset.split_anchors(Split::Test, p.rollout.history, p.rollout.k_max),
        "test",
    )?;
    let spw = p.dataset.steps_per_week();
    let s = p.rollout.env.total_resources;
    let mut reports: Vec<WeeklyReport> = Vec::new();
    for i in 0..cfg.trials {
        let r = run_trial(&p, anchors.clone(), cfg.seed + i as u64)?;
        reports.push(weekly_report(&r.log, spw, s)?);
    }
    let windows = (0..reports[0].windows.len())
        .map(|w| MetricSet::mean(&reports.iter().map(|r| r.windows[w]).collect::<Vec<_>>()))
        .collect::<asterlab_core::Result<Vec<_>>>()?;
    let per_trial: Vec<MetricSet> = reports.iter().map(|r| r.mean).collect();
    let report = EvalReport {
        policy: p.loaded.policy(p.omega.clone()).name().to_string(),
        trials: cfg.trials,
        seed: cfg.seed,
        resources: s,
        resource_level: p.level.clone(),
        steps_per_week: spw,
        test_steps: anchors.len(),
        mean: MetricSet::mean(&per_trial)?,
        windows: windows.clone(),
        per_trial,
    };
    create_out(cfg)?;
    let weekly = WeeklyReport {
        steps_per_week: spw,
        windows,
        mean: report.mean,
    };
    weekly.write_csv(fs::File::create(cfg.out.join(WEEKLY_FILE))?)?;
    write_json(&cfg.out.join(REPORT_FILE), &report)?;
    Ok(report)
}

/// Replays the policy over the configured split and writes the per-step
/// trace. The `idle_after` column is the resource level series.
pub fn simulate(cfg: &RunConfig, source: &PolicySource) -> Result<Rollout> {
    let p = prepare(cfg, source)?;
    let (h, k) = (p.rollout.history, p.rollout.k_max);
    let anchors = match cfg.simulate_split {
        Some(split) => p.dataset.split_anchors(split, h, k),
        None => p.dataset.anchors(h, k),
    };
    let anchors = nonempty(anchors, "simulation")?;
    let r = run_trial(&p, anchors, cfg.seed)?;
    create_out(cfg)?;
    r.write_trace_csv(fs::File::create(cfg.out.join(TRACE_FILE))?)?;
    Ok(r)
}

/// Per-step reward of a hidden task that cares about one objective only.
///
/// The vector is zero except at the task's objective. Benefits pass
/// through. Costs are reported as their saving against the worst case of
/// 1, so the sign-masked value `1 − cost` is non-negative and a task that
/// only cares about a cost still accrues positive return.
pub fn task_reward(task: Objective, reward: &RewardVector, sign: &[f64]) -> Vec<f64> {
    let j = task.index();
    let mut out = vec![0.0; reward.0.len()];
    out[j] = if sign[j] > 0.0 { reward.0[j] } else { reward.0[j] - 1.0 };
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferReport {
    pub hidden_task: String,
    pub seed: u64,
    pub omega: Vec<f64>,
    /// Sign-masked cumulative task reward per objective.
    pub totals: Vec<f64>,
    pub degenerate: bool,
    /// Steps rolled under each one-hot candidate preference.
    pub candidate_steps: Vec<usize>,
}

/// Rolls the trained agent under each one-hot candidate preference over the
/// test split, scores the steps with the hidden task and recovers the
/// preference that best explains the observed returns.
pub fn infer(cfg: &RunConfig, checkpoint: &Path, task: Objective) -> Result<InferReport> {
    let p = prepare(cfg, &PolicySource::Checkpoint(checkpoint.to_path_buf()))?;
    let Loaded::Model(model) = &p.loaded else {
        unreachable!("prepared from a checkpoint")
    };
    let sign = model.sign_mask.clone();
    let anchors = nonempty(
        p.dataset.split_anchors(Split::Test, p.rollout.history, p.rollout.k_max),
        "test",
    )?;
    let d = sign.len();
    let mut rewards = Vec::new();
    let mut candidate_steps = Vec::new();
    for k in 0..d {
        let rc = p.rollout.clone();
        let r = rollout(
            &p.dataset,
            anchors.clone(),
            &model.policy(one_hot(d, k), 0.0),
            &rc,
            &mut ChaCha8Rng::seed_from_u64(cfg.seed),
        )?;
        candidate_steps.push(r.rewards.len());
        rewards.extend(r.rewards.iter().map(|rv| task_reward(task, rv, &sign)));
    }
    let inferred = infer_preference(&rewards, &sign)?;
    let report = InferReport {
        hidden_task: task.to_string(),
        seed: cfg.seed,
        omega: inferred.omega,
        totals: inferred.totals,
        degenerate: inferred.degenerate,
        candidate_steps,
    };
    create_out(cfg)?;
    write_json(&cfg.out.join(INFERRED_FILE), &report)?;
    Ok(report)
}
