//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Every key has a default, so an empty file is a valid config. The echo
//! produced by [`RunConfig::render`] parses back to the same config.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use asterlab_core::agent::Aggregate;
use asterlab_core::data::{Pattern, ResourceLevel, ResourceLevelConfig, Split};
use asterlab_core::trainer::TrainConfig;

use crate::InputError;

/// Where the event series comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// A dataset archive written by `ingest`.
    Archive(PathBuf),
    Synthetic {
        pattern: Pattern,
        nodes: usize,
        steps: usize,
        seed: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    Accuracy,
    FalseAlarm,
    Distance,
    Time,
}

impl Objective {
    pub const ALL: [Objective; 4] = [
        Objective::Accuracy,
        Objective::FalseAlarm,
        Objective::Distance,
        Objective::Time,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "accuracy" | "0" => Ok(Objective::Accuracy),
            "false_alarm" | "1" => Ok(Objective::FalseAlarm),
            "distance" | "2" => Ok(Objective::Distance),
            "time" | "3" => Ok(Objective::Time),
            other => Err(format!(
                "unknown objective '{other}' (expected accuracy, false_alarm, distance or time)"
            )),
        }
    }
}

impl Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Objective::Accuracy => "accuracy",
            Objective::FalseAlarm => "false_alarm",
            Objective::Distance => "distance",
            Objective::Time => "time",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub trials: usize,
    pub dataset: Option<PathBuf>,
    pub synthetic_pattern: Pattern,
    pub synthetic_nodes: usize,
    pub synthetic_steps: usize,
    pub synthetic_seed: u64,
    pub resource_level: ResourceLevel,
    /// Explicit resource count; overrides `resource_level`.
    pub resources: Option<usize>,
    pub levels: ResourceLevelConfig,
    /// Training settings. `train.env.total_resources` and `train.seed` are
    /// filled in from the fields above when a command runs.
    pub train: TrainConfig,
    /// Evaluation preference; uniform when unset.
    pub preference: Option<Vec<f64>>,
    pub budget_cap: Option<usize>,
    pub simulate_split: Option<Split>,
    pub interval_secs: i64,
    pub hidden_task: Objective,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("out"),
            trials: 1,
            dataset: None,
            synthetic_pattern: Pattern::PoissonHotspots,
            synthetic_nodes: 16,
            synthetic_steps: 2000,
            synthetic_seed: 0,
            resource_level: ResourceLevel::Medium,
            resources: None,
            levels: ResourceLevelConfig::default(),
            train: TrainConfig::default(),
            preference: None,
            budget_cap: None,
            simulate_split: Some(Split::Test),
            interval_secs: 3600,
            hidden_task: Objective::Accuracy,
        }
    }
}

fn parse<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: Display,
{
    value.parse().map_err(|e| format!("cannot parse '{value}': {e}"))
}

fn parse_list<T: FromStr>(value: &str) -> Result<Vec<T>, String>
where
    T::Err: Display,
{
    value.split(',').map(|v| parse(v.trim())).collect()
}

fn optional<T: FromStr>(value: &str) -> Result<Option<T>, String>
where
    T::Err: Display,
{
    match value {
        "none" | "auto" => Ok(None),
        v => parse(v).map(Some),
    }
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn show<T: Display>(v: &Option<T>, empty: &str) -> String {
    v.as_ref().map_or_else(|| empty.to_string(), ToString::to_string)
}

fn split_name(s: Option<Split>) -> &'static str {
    match s {
        Some(Split::Train) => "train",
        Some(Split::Validation) => "validation",
        Some(Split::Test) => "test",
        None => "all",
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, InputError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| InputError(format!("{}: {e}", path.display())))?;
        Self::from_str_at(&text, &path.display().to_string())
    }

    /// Parses config text. `origin` prefixes error messages.
    pub fn from_str_at(text: &str, origin: &str) -> Result<Self, InputError> {
        let mut cfg = RunConfig::default();
        let (mut dataset_line, mut synthetic_line) = (None, None);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| InputError(format!("{origin}:{}: expected 'key = value'", i + 1)))?;
            let key = key.trim();
            cfg.set(key, value.trim())
                .map_err(|e| InputError(format!("{origin}:{}: {e}", i + 1)))?;
            if key == "dataset" {
                dataset_line = cfg.dataset.as_ref().map(|_| i + 1);
            } else if key.starts_with("synthetic_") {
                synthetic_line = Some(i + 1);
            }
        }
        if let (Some(d), Some(s)) = (dataset_line, synthetic_line) {
            return Err(InputError(format!(
                "{origin}:{}: 'dataset' (line {d}) and synthetic_* settings are mutually exclusive",
                d.max(s)
            )));
        }
        Ok(cfg)
    }

    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let t = &mut self.train;
        match key {
            "seed" => self.seed = parse(value)?,
            "out" => self.out = PathBuf::from(value),
            "trials" => self.trials = parse(value)?,
            "dataset" => self.dataset = optional(value)?,
            "synthetic_pattern" => self.synthetic_pattern = parse(value)?,
            "synthetic_nodes" => self.synthetic_nodes = parse(value)?,
            "synthetic_steps" => self.synthetic_steps = parse(value)?,
            "synthetic_seed" => self.synthetic_seed = parse(value)?,
            "resource_level" => self.resource_level = parse(value)?,
            "resources" => self.resources = optional(value)?,
            "low_max" => self.levels.low_max = parse(value)?,
            "medium_max" => self.levels.medium_max = parse(value)?,
            "low_ratio" => self.levels.low_ratio = parse(value)?,
            "medium_ratio" => self.levels.medium_ratio = parse(value)?,
            "high_ratio" => self.levels.high_ratio = parse(value)?,
            "epochs" => t.epochs = parse(value)?,
            "batch_size" => t.batch_size = parse(value)?,
            "history" => t.history = parse(value)?,
            "learning_rate" => t.learning_rate = parse(value)?,
            "grad_clip" => t.grad_clip = parse(value)?,
            "update_every" => t.update_every = parse(value)?,
            "warmup" => t.warmup = parse(value)?,
            "episode_len" => t.episode_len = parse(value)?,
            "embed_dim" => t.model.embed_dim = parse(value)?,
            "saturation" => t.model.saturation = parse(value)?,
            "conv_channels" => t.model.conv_channels = parse(value)?,
            "features" => t.model.features = parse(value)?,
            "heads" => t.model.heads = parse(value)?,
            "ffn_hidden" => t.model.ffn_hidden = parse(value)?,
            "decoder_hidden" => t.model.decoder_hidden = parse(value)?,
            "k_max" => t.model.k_max = parse(value)?,
            "short_window" => t.model.short_window = parse(value)?,
            "temperature" => t.model.temperature = parse(value)?,
            "agent_hidden" => t.agent.hidden = parse_list(value)?,
            "discount" => t.agent.gamma_discount = parse(value)?,
            "agent_learning_rate" => t.agent.learning_rate = parse(value)?,
            "target_sync" => t.agent.target_sync = parse(value)?,
            "replay_capacity" => t.agent.replay_capacity = parse(value)?,
            "batch_transitions" => t.agent.batch_transitions = parse(value)?,
            "batch_preferences" => t.agent.batch_preferences = parse(value)?,
            "aggregate" => {
                t.agent.aggregate = match value {
                    "mean" => Aggregate::Mean,
                    "sum" => Aggregate::Sum,
                    other => return Err(format!("unknown aggregate '{other}' (expected mean or sum)")),
                }
            }
            "agent_grad_clip" => t.agent.grad_clip = parse(value)?,
            "sign_mask" => t.agent.sign_mask = parse_list(value)?,
            "cooldown" => t.env.cooldown = parse(value)?,
            "coverage_window" => t.env.coverage_window = parse(value)?,
            "accuracy_weight" => t.env.alpha = parse(value)?,
            "false_alarm_weight" => t.env.beta = parse(value)?,
            "distance_weight" => t.env.gamma_dist = parse(value)?,
            "time_weight" => t.env.delta = parse(value)?,
            "preference" => {
                self.preference = match value {
                    "uniform" => None,
                    v => Some(parse_list(v)?),
                }
            }
            "budget_cap" => self.budget_cap = optional(value)?,
            "simulate_split" => {
                self.simulate_split = match value {
                    "train" => Some(Split::Train),
                    "validation" => Some(Split::Validation),
                    "test" => Some(Split::Test),
                    "all" => None,
                    other => return Err(format!("unknown split '{other}'")),
                }
            }
            "interval_secs" => self.interval_secs = parse(value)?,
            "hidden_task" => self.hidden_task = parse(value)?,
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    /// Every setting as `(key, value)` in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let mut out = vec![
            ("seed", self.seed.to_string()),
            ("out", self.out.display().to_string()),
            ("trials", self.trials.to_string()),
            ("dataset", show(&self.dataset.as_ref().map(|p| p.display()), "none")),
        ];
        if self.dataset.is_none() {
            out.extend([
                ("synthetic_pattern", self.synthetic_pattern.to_string()),
                ("synthetic_nodes", self.synthetic_nodes.to_string()),
                ("synthetic_steps", self.synthetic_steps.to_string()),
                ("synthetic_seed", self.synthetic_seed.to_string()),
            ]);
        }
        out.extend([
            ("resource_level", self.resource_level.to_string()),
            ("resources", show(&self.resources, "auto")),
            ("low_max", self.levels.low_max.to_string()),
            ("medium_max", self.levels.medium_max.to_string()),
            ("low_ratio", self.levels.low_ratio.to_string()),
            ("medium_ratio", self.levels.medium_ratio.to_string()),
            ("high_ratio", self.levels.high_ratio.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("history", t.history.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("grad_clip", t.grad_clip.to_string()),
            ("update_every", t.update_every.to_string()),
            ("warmup", t.warmup.to_string()),
            ("episode_len", t.episode_len.to_string()),
            ("embed_dim", t.model.embed_dim.to_string()),
            ("saturation", t.model.saturation.to_string()),
            ("conv_channels", t.model.conv_channels.to_string()),
            ("features", t.model.features.to_string()),
            ("heads", t.model.heads.to_string()),
            ("ffn_hidden", t.model.ffn_hidden.to_string()),
            ("decoder_hidden", t.model.decoder_hidden.to_string()),
            ("k_max", t.model.k_max.to_string()),
            ("short_window", t.model.short_window.to_string()),
            ("temperature", t.model.temperature.to_string()),
            ("agent_hidden", join(&t.agent.hidden)),
            ("discount", t.agent.gamma_discount.to_string()),
            ("agent_learning_rate", t.agent.learning_rate.to_string()),
            ("target_sync", t.agent.target_sync.to_string()),
            ("replay_capacity", t.agent.replay_capacity.to_string()),
            ("batch_transitions", t.agent.batch_transitions.to_string()),
            ("batch_preferences", t.agent.batch_preferences.to_string()),
            (
                "aggregate",
                match t.agent.aggregate {
                    Aggregate::Mean => "mean".into(),
                    Aggregate::Sum => "sum".into(),
                },
            ),
            ("agent_grad_clip", t.agent.grad_clip.to_string()),
            ("sign_mask", join(&t.agent.sign_mask)),
            ("cooldown", t.env.cooldown.to_string()),
            ("coverage_window", t.env.coverage_window.to_string()),
            ("accuracy_weight", t.env.alpha.to_string()),
            ("false_alarm_weight", t.env.beta.to_string()),
            ("distance_weight", t.env.gamma_dist.to_string()),
            ("time_weight", t.env.delta.to_string()),
            (
                "preference",
                self.preference.as_ref().map_or_else(|| "uniform".into(), |p| join(p)),
            ),
            ("budget_cap", show(&self.budget_cap, "none")),
            ("simulate_split", split_name(self.simulate_split).into()),
            ("interval_secs", self.interval_secs.to_string()),
            ("hidden_task", self.hidden_task.to_string()),
        ]);
        out
    }

    /// The effective config in file syntax.
    pub fn render(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn source(&self) -> DataSource {
        match &self.dataset {
            Some(p) => DataSource::Archive(p.clone()),
            None => DataSource::Synthetic {
                pattern: self.synthetic_pattern,
                nodes: self.synthetic_nodes,
                steps: self.synthetic_steps,
                seed: self.synthetic_seed,
            },
        }
    }

    /// Every violated constraint that can be checked without data.
    pub fn problems(&self) -> Vec<String> {
        let mut out = self.train.problems();
        if self.dataset.is_none() && self.synthetic_nodes < 2 {
            out.push("synthetic_nodes must be at least 2".into());
        }
        if self.trials == 0 {
            out.push("trials must be positive".into());
        }
        if self.interval_secs <= 0 {
            out.push("interval_secs must be positive".into());
        }
        if self.resources == Some(0) {
            out.push("resources must be at least 1".into());
        }
        if let Err(e) = self.levels.validate() {
            out.push(e.to_string());
        }
        if let Some(p) = &self.preference {
            if let Err(e) = asterlab_core::agent::validate_preference(p, self.train.agent.objectives()) {
                out.push(format!("preference: {e}"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), InputError> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(InputError(format!("invalid config:\n  {}", p.join("\n  "))))
        }
    }
}
