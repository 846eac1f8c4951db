//! Discrete-time dispatch environment.
//!
//! Each step the caller demands a set of nodes. Idle resources are matched
//! to demands by minimum total distance; matched resources move to their
//! demand node and cool down for `cooldown` further steps. Every matched
//! node is scored against the ground-truth events of the next
//! `coverage_window` steps.

mod hungarian;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use hungarian::{assign, Matching};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub total_resources: usize,
    pub cooldown: usize,
    pub coverage_window: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma_dist: f64,
    pub delta: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            total_resources: 4,
            cooldown: 2,
            coverage_window: 12,
            alpha: 1.0,
            beta: 1.0,
            gamma_dist: 1.0,
            delta: 1.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self, k_max: usize) -> Result<()> {
        if self.total_resources < 1 {
            return Err(Error::invalid("total_resources must be at least 1"));
        }
        if self.coverage_window < 1 || self.coverage_window > k_max {
            return Err(Error::invalid(format!(
                "coverage_window {} outside [1, {k_max}]",
                self.coverage_window
            )));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma_dist", self.gamma_dist),
            ("delta", self.delta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be a non-negative real")));
            }
        }
        Ok(())
    }
}

/// Reward components in fixed order `[accuracy, false alarm, distance, time]`,
/// all stored as non-negative magnitudes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardVector(pub [f64; 4]);

impl RewardVector {
    pub fn accuracy(&self) -> f64 {
        self.0[0]
    }
    pub fn false_alarm(&self) -> f64 {
        self.0[1]
    }
    pub fn distance(&self) -> f64 {
        self.0[2]
    }
    pub fn time(&self) -> f64 {
        self.0[3]
    }
}

/// `α·acc − β·false − γ·dist + δ·time`.
pub fn scalarize_reward(rv: &RewardVector, cfg: &EnvConfig) -> f64 {
    cfg.alpha * rv.accuracy() - cfg.beta * rv.false_alarm() - cfg.gamma_dist * rv.distance()
        + cfg.delta * rv.time()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
    max: f64,
}

impl DistanceMatrix {
    pub fn euclidean(coords: &[[f64; 2]]) -> Self {
        let n = coords.len();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let dx = coords[i][0] - coords[j][0];
                let dy = coords[i][1] - coords[j][1];
                data[i * n + j] = dx.hypot(dy);
            }
        }
        let max = data.iter().copied().fold(0.0, f64::max);
        DistanceMatrix { n, data, max }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    /// `d / max(D)`, or 0 when all nodes coincide.
    pub fn normalized(&self, i: usize, j: usize) -> f64 {
        if self.max > 0.0 {
            self.get(i, j) / self.max
        } else {
            0.0
        }
    }

    pub fn nodes(&self) -> usize {
        self.n
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResourceStatus {
    Idle,
    Cooldown,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resource {
    pub id: usize,
    pub location: usize,
    pub cooldown_remaining: usize,
}

impl Resource {
    pub fn status(&self) -> ResourceStatus {
        if self.cooldown_remaining == 0 {
            ResourceStatus::Idle
        } else {
            ResourceStatus::Cooldown
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Census {
    pub per_node: Vec<usize>,
    pub idle: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeOutcome {
    Unallocated,
    /// Covered an event `delta_t` steps ahead (1-indexed).
    Success { delta_t: usize },
    FalseAlarm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dispatch {
    pub resource: usize,
    pub from: usize,
    pub to: usize,
    pub distance: f64,
    pub normalized_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub reward: RewardVector,
    pub outcomes: Vec<NodeOutcome>,
    pub dispatches: Vec<Dispatch>,
    /// Idle resources before the action.
    pub idle_before: usize,
    /// Nodes with at least one event inside the coverage window.
    pub event_nodes: usize,
    pub census: Census,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DispatchEnv {
    config: EnvConfig,
    dist: DistanceMatrix,
    resources: Vec<Resource>,
    step: usize,
}

impl DispatchEnv {
    /// Places `total_resources` resources on nodes drawn uniformly from a
    /// ChaCha8 stream seeded with `seed`, one `random_range(0..N)` per
    /// resource in id order.
    pub fn reset(config: EnvConfig, coords: &[[f64; 2]], seed: u64) -> Result<Self> {
        if config.total_resources < 1 {
            return Err(Error::invalid("total_resources must be at least 1"));
        }
        if coords.is_empty() {
            return Err(Error::invalid("environment needs at least one node"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = coords.len();
        let resources = (0..config.total_resources)
            .map(|id| Resource {
                id,
                location: rng.random_range(0..n),
                cooldown_remaining: 0,
            })
            .collect();
        Ok(DispatchEnv {
            config,
            dist: DistanceMatrix::euclidean(coords),
            resources,
            step: 0,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn distances(&self) -> &DistanceMatrix {
        &self.dist
    }

    pub fn resources(&self) -> &[Resource] {
        &self.resources
    }

    pub fn nodes(&self) -> usize {
        self.dist.nodes()
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn idle_census(&self) -> Census {
        let mut per_node = vec![0; self.nodes()];
        for r in &self.resources {
            if r.status() == ResourceStatus::Idle {
                per_node[r.location] += 1;
            }
        }
        let idle = per_node.iter().sum();
        Census { per_node, idle }
    }

    /// Fraction of the pool currently idle.
    pub fn idle_ratio(&self) -> f64 {
        self.idle_census().idle as f64 / self.config.total_resources as f64
    }

    /// Applies `action` and scores it against `future`, a row-major
    /// `[steps × N]` block of raw event counts starting one step ahead.
    pub fn step(&mut self, action: &[bool], future: &[f64]) -> Result<StepOutcome> {
        let n = self.nodes();
        let w = self.config.coverage_window;
        if action.len() != n {
            return Err(Error::shape("env.step action", &[action.len()], &[n]));
        }
        if future.len() % n != 0 || future.len() / n < w {
            return Err(Error::SequenceTooShort {
                len: future.len() / n,
                needed: w,
            });
        }
        let idle: Vec<usize> = self
            .resources
            .iter()
            .filter(|r| r.status() == ResourceStatus::Idle)
            .map(|r| r.id)
            .collect();
        let demands: Vec<usize> = (0..n).filter(|&i| action[i]).collect();
        if demands.len() > idle.len() {
            return Err(Error::BudgetExceeded {
                requested: demands.len(),
                available: idle.len(),
            });
        }
        let first_event = |node: usize| (0..w).find(|&j| future[j * n + node] > 0.0).map(|j| j + 1);
        let event_nodes = (0..n).filter(|&i| first_event(i).is_some()).count();

        let cost: Vec<Vec<f64>> = idle
            .iter()
            .map(|&rid| {
                let from = self.resources[rid].location;
                demands.iter().map(|&d| self.dist.get(from, d)).collect()
            })
            .collect();
        let matching = if demands.is_empty() {
            Matching {
                assignment: Vec::new(),
                cost: 0.0,
            }
        } else {
            assign(&cost)
        };

        let mut outcomes = vec![NodeOutcome::Unallocated; n];
        let mut dispatches = Vec::new();
        let mut sum = [0.0; 4];
        let mut dispatched = vec![false; self.resources.len()];
        for (k, slot) in matching.assignment.iter().enumerate() {
            let Some(s) = *slot else { continue };
            let rid = idle[s];
            let node = demands[k];
            let from = self.resources[rid].location;
            let d = Dispatch {
                resource: rid,
                from,
                to: node,
                distance: self.dist.get(from, node),
                normalized_distance: self.dist.normalized(from, node),
            };
            let (acc, time) = match first_event(node) {
                Some(dt) => {
                    outcomes[node] = NodeOutcome::Success { delta_t: dt };
                    (1.0, (w - dt + 1) as f64 / w as f64)
                }
                None => {
                    outcomes[node] = NodeOutcome::FalseAlarm;
                    (0.0, 0.0)
                }
            };
            sum[0] += acc;
            sum[1] += 1.0 - acc;
            sum[2] += d.normalized_distance;
            sum[3] += time;
            self.resources[rid].location = node;
            self.resources[rid].cooldown_remaining = self.config.cooldown;
            dispatched[rid] = true;
            dispatches.push(d);
        }
        let reward = if dispatches.is_empty() {
            RewardVector::default()
        } else {
            RewardVector(sum.map(|s| s / dispatches.len() as f64))
        };
        for r in self.resources.iter_mut() {
            if !dispatched[r.id] && r.cooldown_remaining > 0 {
                r.cooldown_remaining -= 1;
            }
        }
        self.step += 1;
        Ok(StepOutcome {
            reward,
            outcomes,
            dispatches,
            idle_before: idle.len(),
            event_nodes,
            census: self.idle_census(),
        })
    }
}
