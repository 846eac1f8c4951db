//! Alternating training of the forecaster and the dispatch agent.
//!
//! Training windows are cut into episodes of consecutive steps. Each epoch
//! shuffles the episode order, then walks every episode chronologically in
//! a freshly reset environment under one sampled preference. Per step the
//! forecaster encodes the history conditioned on the idle census, the
//! agent acts on the detached state, the environment scores the action
//! against the true future, and the transition is stored. The agent learns
//! from replay every few steps; the forecaster takes one Adam step per
//! batch on its masked loss. The two parameter sets never share an
//! optimiser or a gradient.
//!
//! A single ChaCha8 stream drives initialisation, shuffling, environment
//! seeds, preferences, exploration and replay sampling, so a seed and a
//! config fully determine the run. Resuming from a training checkpoint
//! taken at an epoch boundary reproduces the uninterrupted run exactly.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{
    epsilon_schedule, lambda_schedule, sample_preference, uniform_preference, AgentConfig, PodaAgent, QNetwork,
    Transition,
};
use crate::checkpoint::{self, Kind};
use crate::data::{Dataset, Split, HISTORY_LEN};
use crate::env::{DispatchEnv, EnvConfig};
use crate::error::{Error, Result};
use crate::metrics::MetricSet;
use crate::model::{forecast_loss, Forecaster, ModelConfig};
use crate::numerics::{AdamState, Parameterized, Tape};
use crate::rollout::{rollout, AgentPolicy, Policy, RolloutConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub history: usize,
    /// `nodes` is taken from the dataset when training starts.
    pub model: ModelConfig,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub agent: AgentConfig,
    pub env: EnvConfig,
    pub update_every: usize,
    pub warmup: usize,
    pub episode_len: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 8,
            history: HISTORY_LEN,
            model: ModelConfig::new(0),
            learning_rate: 1e-3,
            grad_clip: 5.0,
            agent: AgentConfig::default(),
            env: EnvConfig::default(),
            update_every: 4,
            warmup: 500,
            episode_len: 168,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Every violated constraint, so all can be reported at once.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut model = self.model.clone();
        model.nodes = model.nodes.max(1);
        if let Err(e) = model.validate() {
            out.push(e.to_string());
        }
        if let Err(e) = self.env.validate(self.model.k_max) {
            out.push(e.to_string());
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("update_every", self.update_every),
            ("episode_len", self.episode_len),
            ("agent.batch_transitions", self.agent.batch_transitions),
            ("agent.batch_preferences", self.agent.batch_preferences),
            ("agent.replay_capacity", self.agent.replay_capacity),
        ] {
            if v == 0 {
                out.push(format!("{name} must be positive"));
            }
        }
        let needed = self.model.history_needed().max(crate::rast::SHORT_MIN_WINDOW);
        if self.history < needed {
            out.push(format!("history must be at least {needed}"));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("grad_clip", self.grad_clip),
            ("agent.learning_rate", self.agent.learning_rate),
            ("agent.grad_clip", self.agent.grad_clip),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("{name} must be a positive real"));
            }
        }
        if !(0.0..=1.0).contains(&self.agent.gamma_discount) {
            out.push("agent.gamma_discount must lie in [0, 1]".into());
        }
        if self.agent.sign_mask.len() != 4 {
            out.push("agent.sign_mask must have 4 entries".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(p.join("; ")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    pub forecast_loss: f64,
    /// Mean agent loss over updates in this batch, if any ran.
    pub agent_loss: Option<f64>,
    pub epsilon: f64,
    pub lambda: f64,
    pub s_t_mean: f64,
}

pub fn write_log_csv<W: Write>(rows: &[LogRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["step", "epoch", "forecast_loss", "agent_loss", "epsilon", "lambda", "S_t_mean"])
        .map_err(io)?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.epoch.to_string(),
            r.forecast_loss.to_string(),
            r.agent_loss.map_or(String::new(), |v| v.to_string()),
            r.epsilon.to_string(),
            r.lambda.to_string(),
            r.s_t_mean.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub forecast_loss: f64,
    pub validation_reward: f64,
    pub validation_metrics: MetricSet,
}

/// What evaluation needs: the forecaster, the Q-network and the settings
/// they were trained under.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainedModel {
    pub forecaster: Forecaster,
    pub network: QNetwork,
    pub sign_mask: Vec<f64>,
    pub history: usize,
    pub env: EnvConfig,
    pub epoch: Option<usize>,
}

impl TrainedModel {
    pub fn policy(&self, omega: Vec<f64>, epsilon: f64) -> Policy<'_> {
        Policy::Agent(AgentPolicy {
            forecaster: &self.forecaster,
            network: &self.network,
            omega,
            sign: self.sign_mask.clone(),
            epsilon,
        })
    }

    pub fn rollout_config(&self, env_seed: u64) -> RolloutConfig {
        RolloutConfig {
            env: self.env.clone(),
            history: self.history,
            k_max: self.forecaster.config.k_max,
            env_seed,
            budget_cap: None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, Kind::Model, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        checkpoint::load(path, Kind::Model)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trainer {
    pub config: TrainConfig,
    pub forecaster: Forecaster,
    pub forecast_opt: AdamState,
    pub agent: PodaAgent,
    rng: ChaCha8Rng,
    /// Next epoch to run.
    pub epoch: usize,
    pub env_steps: u64,
    pub log: Vec<LogRow>,
    pub epochs: Vec<EpochSummary>,
    pub best: Option<(f64, TrainedModel)>,
}

struct Pending {
    state: crate::numerics::Value,
    action: Vec<bool>,
    reward: Vec<f64>,
}

impl Trainer {
    pub fn new(mut config: TrainConfig, dataset: &Dataset) -> Result<Self> {
        config.model.nodes = dataset.nodes;
        config.validate()?;
        check_dataset(&config, dataset)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let forecaster = Forecaster::new(&mut rng, config.model.clone())?;
        let forecast_opt = AdamState::new(&forecaster.params(), config.learning_rate);
        let agent = PodaAgent::new(&mut rng, forecaster.state_width(), config.agent.clone());
        Ok(Trainer {
            config,
            forecaster,
            forecast_opt,
            agent,
            rng,
            epoch: 0,
            env_steps: 0,
            log: Vec::new(),
            epochs: Vec::new(),
            best: None,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, Kind::Training, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        checkpoint::load(path, Kind::Training)
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    fn train_anchors(&self, dataset: &Dataset) -> std::ops::Range<usize> {
        dataset.split_anchors(Split::Train, self.config.history, self.config.model.k_max)
    }

    pub fn total_env_steps(&self, dataset: &Dataset) -> u64 {
        (self.config.epochs * self.train_anchors(dataset).len()) as u64
    }

    /// Current model as an evaluation artifact.
    pub fn snapshot(&self) -> TrainedModel {
        TrainedModel {
            forecaster: self.forecaster.clone(),
            network: self.agent.online.clone(),
            sign_mask: self.config.agent.sign_mask.clone(),
            history: self.config.history,
            env: self.config.env.clone(),
            epoch: self.epoch.checked_sub(1),
        }
    }

    /// Best model by validation reward, or the current one before any epoch.
    pub fn best_model(&self) -> TrainedModel {
        self.best.as_ref().map_or_else(|| self.snapshot(), |(_, m)| m.clone())
    }

    /// Runs the remaining epochs.
    pub fn run(&mut self, dataset: &Dataset) -> Result<()> {
        while !self.is_finished() {
            self.run_epoch(dataset)?;
        }
        Ok(())
    }

    pub fn run_epoch(&mut self, dataset: &Dataset) -> Result<EpochSummary> {
        check_dataset(&self.config, dataset)?;
        let cfg = self.config.clone();
        let anchors = self.train_anchors(dataset);
        let total_steps = self.total_env_steps(dataset);
        let lambda = lambda_schedule(self.epoch, cfg.epochs.saturating_sub(1));
        let mut episodes: Vec<std::ops::Range<usize>> = anchors
            .clone()
            .step_by(cfg.episode_len)
            .map(|s| s..(s + cfg.episode_len).min(anchors.end))
            .collect();
        episodes.shuffle(&mut self.rng);
        let rows_before = self.log.len();

        for episode in episodes {
            let env_seed: u64 = self.rng.random();
            let mut env = DispatchEnv::reset(cfg.env.clone(), &dataset.coords, env_seed)?;
            let omega = sample_preference(&mut self.rng, cfg.agent.objectives());
            let mut pending: Option<Pending> = None;
            let batches: Vec<Vec<usize>> = episode.collect::<Vec<_>>().chunks(cfg.batch_size).map(<[usize]>::to_vec).collect();
            for batch in &batches {
                let mut tape = Tape::recording();
                let mut losses = Vec::with_capacity(batch.len());
                let mut agent_losses = Vec::new();
                let mut idle_sum = 0usize;
                let epsilon_first = epsilon_schedule(self.env_steps, total_steps);
                for &anchor in batch {
                    let window = dataset.window(anchor, cfg.history, cfg.model.k_max)?;
                    let census = env.idle_census();
                    idle_sum += census.idle;
                    let out = self.forecaster.forward(&mut tape, &window.history, &census, cfg.env.total_resources)?;
                    let state = self.forecaster.agent_state(&out, &census, &dataset.coords)?;
                    if let Some(p) = pending.take() {
                        self.agent.store(Transition {
                            state: p.state,
                            action: p.action,
                            reward: p.reward,
                            next_state: state.rows().clone(),
                            next_budget: census.idle,
                            done: false,
                        });
                    }
                    let epsilon = epsilon_schedule(self.env_steps, total_steps);
                    let action = self.agent.act(state.rows(), &omega, census.idle, epsilon, &mut self.rng)?;
                    let outcome = env.step(&action, &window.future)?;
                    pending = Some(Pending {
                        state: state.rows().clone(),
                        action,
                        reward: outcome.reward.0.to_vec(),
                    });
                    self.env_steps += 1;
                    if self.env_steps % cfg.update_every as u64 == 0 && self.agent.replay.len() >= cfg.warmup {
                        if let Some(l) = self.agent.update(&mut self.rng, lambda)? {
                            agent_losses.push(l);
                        }
                    }
                    let truth = normalized_future(dataset, &window.future);
                    losses.push(forecast_loss(&mut tape, &out.forecast.values, &truth, out.forecast.horizon)?);
                }
                let mut total = losses[0].clone();
                for l in &losses[1..] {
                    total = tape.add(&total, l)?;
                }
                let mean = tape.scale(&total, 1.0 / losses.len() as f64)?;
                let value = mean.item();
                let mut grads = tape.backward(&mean)?;
                grads.clip_global_norm(&self.forecaster.params(), cfg.grad_clip);
                self.forecast_opt.step_with(&mut self.forecaster.params_mut(), &grads)?;
                self.log.push(LogRow {
                    step: self.log.len(),
                    epoch: self.epoch,
                    forecast_loss: value,
                    agent_loss: (!agent_losses.is_empty())
                        .then(|| agent_losses.iter().sum::<f64>() / agent_losses.len() as f64),
                    epsilon: epsilon_first,
                    lambda,
                    s_t_mean: idle_sum as f64 / batch.len() as f64,
                });
            }
            // the last step of an episode bootstraps from the following window
            if let (Some(p), Some(&last)) = (pending, batches.last().and_then(|b| b.last())) {
                let next = last + 1;
                if dataset.anchors(cfg.history, cfg.model.k_max).contains(&next) {
                    let window = dataset.window(next, cfg.history, cfg.model.k_max)?;
                    let census = env.idle_census();
                    let out = self.forecaster.forward(&mut Tape::new(), &window.history, &census, cfg.env.total_resources)?;
                    let state = self.forecaster.agent_state(&out, &census, &dataset.coords)?;
                    self.agent.store(Transition {
                        state: p.state,
                        action: p.action,
                        reward: p.reward,
                        next_state: state.rows().clone(),
                        next_budget: census.idle,
                        done: false,
                    });
                }
            }
        }

        let rows = &self.log[rows_before..];
        let forecast_loss = if rows.is_empty() {
            0.0
        } else {
            rows.iter().map(|r| r.forecast_loss).sum::<f64>() / rows.len() as f64
        };
        let (validation_reward, validation_metrics) = self.validate(dataset)?;
        let summary = EpochSummary {
            epoch: self.epoch,
            forecast_loss,
            validation_reward,
            validation_metrics,
        };
        log::info!(
            "epoch {}: forecast loss {:.4}, validation reward {:.4}",
            summary.epoch,
            summary.forecast_loss,
            summary.validation_reward
        );
        self.epoch += 1;
        if self.best.as_ref().is_none_or(|(s, _)| validation_reward > *s) {
            self.best = Some((validation_reward, self.snapshot()));
        }
        self.epochs.push(summary.clone());
        Ok(summary)
    }

    /// Greedy rollout over the validation split under the uniform
    /// preference, from an environment seeded with the run seed.
    pub fn validate(&self, dataset: &Dataset) -> Result<(f64, MetricSet)> {
        let anchors = dataset.split_anchors(Split::Validation, self.config.history, self.config.model.k_max);
        if anchors.is_empty() {
            return Ok((0.0, MetricSet::default()));
        }
        let model = self.snapshot();
        let policy = model.policy(uniform_preference(self.config.agent.objectives()), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let r = rollout(dataset, anchors, &policy, &model.rollout_config(self.config.seed), &mut rng)?;
        Ok((r.mean_scalarized(), MetricSet::compute(&r.log, self.config.env.total_resources)?))
    }
}

fn check_dataset(config: &TrainConfig, dataset: &Dataset) -> Result<()> {
    if dataset.norm.is_none() {
        return Err(Error::invalid("dataset must be normalised before training"));
    }
    if dataset.nodes != config.model.nodes {
        return Err(Error::invalid(format!(
            "dataset has {} nodes, model expects {}",
            dataset.nodes, config.model.nodes
        )));
    }
    let needed = config.history + config.model.k_max;
    if dataset.steps < needed {
        return Err(Error::SequenceTooShort {
            len: dataset.steps,
            needed,
        });
    }
    Ok(())
}

/// Z-scored copy of a raw future block, the forecaster's training target.
pub fn normalized_future(dataset: &Dataset, future: &[f64]) -> Vec<f64> {
    match dataset.norm {
        Some(s) => future.iter().map(|&x| s.transform(x)).collect(),
        None => future.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize, Pattern};

    pub(crate) fn small_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 4,
            history: 56,
            model: ModelConfig {
                embed_dim: 4,
                conv_channels: 4,
                features: 8,
                heads: 2,
                ffn_hidden: 8,
                decoder_hidden: 8,
                ..ModelConfig::new(0)
            },
            agent: AgentConfig {
                hidden: vec![16],
                batch_transitions: 8,
                batch_preferences: 2,
                ..AgentConfig::default()
            },
            env: EnvConfig {
                total_resources: 2,
                ..EnvConfig::default()
            },
            warmup: 20,
            episode_len: 24,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    fn dataset() -> Dataset {
        let (mut d, _) = synthesize(2, 6, 400, Pattern::PoissonHotspots).unwrap();
        d.normalize().unwrap();
        d
    }

    #[test]
    fn zero_epochs_gives_empty_log() {
        let d = dataset();
        let mut t = Trainer::new(TrainConfig { epochs: 0, ..small_config() }, &d).unwrap();
        t.run(&d).unwrap();
        assert!(t.log.is_empty() && t.best.is_none());
        assert_eq!(t.best_model().epoch, None);
    }

    #[test]
    fn log_rows_and_schedules() {
        let d = dataset();
        let cfg = small_config();
        let mut t = Trainer::new(cfg.clone(), &d).unwrap();
        t.run(&d).unwrap();
        let anchors = d.split_anchors(Split::Train, cfg.history, 12);
        let per_epoch: usize = anchors
            .clone()
            .step_by(cfg.episode_len)
            .map(|s| ((s + cfg.episode_len).min(anchors.end) - s).div_ceil(cfg.batch_size))
            .sum();
        assert_eq!(t.log.len(), 2 * per_epoch);
        let total = t.total_env_steps(&d);
        assert_eq!(t.env_steps, total);
        for r in &t.log {
            assert_eq!(r.lambda, lambda_schedule(r.epoch, 1));
            assert!(r.s_t_mean <= 2.0);
        }
        assert_eq!(t.log[0].epsilon, 1.0);
        assert!(t.log.iter().any(|r| r.agent_loss.is_some()));
        let mut buf = Vec::new();
        write_log_csv(&t.log, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), t.log.len() + 1);
    }

    #[test]
    fn agent_updates_leave_forecaster_alone() {
        let d = dataset();
        let mut t = Trainer::new(small_config(), &d).unwrap();
        t.run_epoch(&d).unwrap();
        let before: Vec<Vec<f64>> = t.forecaster.params().iter().map(|p| p.data().to_vec()).collect();
        let agent_before: Vec<Vec<f64>> = t.agent.online.params().iter().map(|p| p.data().to_vec()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        t.agent.update(&mut rng, 0.3).unwrap();
        let after: Vec<Vec<f64>> = t.forecaster.params().iter().map(|p| p.data().to_vec()).collect();
        assert_eq!(before, after);
        let agent_after: Vec<Vec<f64>> = t.agent.online.params().iter().map(|p| p.data().to_vec()).collect();
        assert_ne!(agent_before, agent_after);
    }

    #[test]
    fn deterministic_and_resumable() {
        let d = dataset();
        let cfg = TrainConfig { epochs: 3, ..small_config() };
        let mut a = Trainer::new(cfg.clone(), &d).unwrap();
        a.run(&d).unwrap();
        let mut b = Trainer::new(cfg.clone(), &d).unwrap();
        b.run_epoch(&d).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        b.save(&path).unwrap();
        let mut c = Trainer::load(&path).unwrap();
        c.run(&d).unwrap();
        assert_eq!(a.log, c.log);
        assert_eq!(a.epochs, c.epochs);
        b.run(&d).unwrap();
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut d = dataset();
        let bad = TrainConfig {
            batch_size: 0,
            learning_rate: -1.0,
            ..small_config()
        };
        assert_eq!(bad.problems().len(), 2);
        assert!(Trainer::new(bad, &d).is_err());
        d.norm = None;
        assert!(Trainer::new(small_config(), &d).is_err());
    }
}
