use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::Value;

/// One environment step as stored for replay. Rewards are the raw
/// environment vectors, independent of any preference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Value,
    pub action: Vec<bool>,
    pub reward: Vec<f64>,
    pub next_state: Value,
    /// Idle resources available at the next state.
    pub next_budget: usize,
    pub done: bool,
}

/// Fixed-capacity ring buffer.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity: capacity.max(1),
            items: Vec::new(),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Up to `k` distinct transitions chosen uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, k: usize) -> Vec<&Transition> {
        let k = k.min(self.items.len());
        sample(rng, self.items.len(), k).into_iter().map(|i| &self.items[i]).collect()
    }
}
