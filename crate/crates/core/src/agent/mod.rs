//! Preference-conditioned multi-objective Q-learning over per-node values.
//!
//! The value of a set of chosen nodes is the mean (or sum) of their
//! per-node Q rows. Actions are chosen greedily by sign-masked scalarised
//! value under the idle-resource budget, with ε-greedy exploration.
//! Learning targets take the envelope maximum over a sampled set of
//! preferences.

mod preference;
mod qnet;
mod replay;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{AdamState, Parameterized, Tape, Value};

pub use preference::{
    epsilon_schedule, infer_preference, lambda_schedule, one_hot, sample_preference, scalarize,
    uniform_preference, validate_preference, InferredPreference, LAMBDA_MAX, SIGN_MASK,
};
pub use qnet::{network_inputs, per_node_q, Dense, QNetwork};
pub use replay::{ReplayBuffer, Transition};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregate {
    Mean,
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub sign_mask: Vec<f64>,
    pub hidden: Vec<usize>,
    pub gamma_discount: f64,
    pub learning_rate: f64,
    pub target_sync: u64,
    pub replay_capacity: usize,
    pub batch_transitions: usize,
    pub batch_preferences: usize,
    pub aggregate: Aggregate,
    pub grad_clip: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            sign_mask: SIGN_MASK.to_vec(),
            hidden: vec![64, 64],
            gamma_discount: 0.99,
            learning_rate: 1e-3,
            target_sync: 200,
            replay_capacity: 10_000,
            batch_transitions: 32,
            batch_preferences: 8,
            aggregate: Aggregate::Mean,
            grad_clip: 5.0,
        }
    }
}

impl AgentConfig {
    pub fn objectives(&self) -> usize {
        self.sign_mask.len()
    }
}

/// Greedy choice: nodes with positive scalarised value, best first, at most `budget`.
pub fn greedy_action(q: &Value, omega: &[f64], sign: &[f64], budget: usize) -> Vec<bool> {
    let n = q.rows();
    let u: Vec<f64> = (0..n).map(|i| scalarize(q.row(i), omega, sign)).collect();
    let mut order: Vec<usize> = (0..n).filter(|&i| u[i] > 0.0).collect();
    // stable sort keeps lower indices first among equal values
    order.sort_by(|&a, &b| u[b].total_cmp(&u[a]));
    let mut action = vec![false; n];
    for &i in order.iter().take(budget) {
        action[i] = true;
    }
    action
}

/// ε-greedy over [`greedy_action`]. The draw order is: one `f64` against
/// ε; on exploration, a subset size uniform in `0..=min(budget, N)`, then
/// that many distinct nodes.
pub fn select_action<R: Rng + ?Sized>(
    q: &Value,
    omega: &[f64],
    sign: &[f64],
    budget: usize,
    epsilon: f64,
    rng: &mut R,
) -> Vec<bool> {
    let n = q.rows();
    if rng.random::<f64>() < epsilon {
        let size = rng.random_range(0..=budget.min(n));
        let mut action = vec![false; n];
        for i in sample(rng, n, size) {
            action[i] = true;
        }
        action
    } else {
        greedy_action(q, omega, sign, budget)
    }
}

/// Aggregate Q vector of the chosen nodes; zero when nothing is chosen.
pub fn aggregate_q(q: &Value, action: &[bool], how: Aggregate) -> Vec<f64> {
    let d = q.cols();
    let mut out = vec![0.0; d];
    let chosen: Vec<usize> = (0..q.rows()).filter(|&i| action[i]).collect();
    for &i in &chosen {
        for k in 0..d {
            out[k] += q.at(i, k);
        }
    }
    if how == Aggregate::Mean && !chosen.is_empty() {
        let c = chosen.len() as f64;
        out.iter_mut().for_each(|v| *v /= c);
    }
    out
}

/// Envelope target `r + γ·Q̄(s', a*, ω*)` given per-candidate next-state Q
/// matrices. `a*, ω*` maximise `ω · sign ⊙ Q̄` with `a` chosen greedily.
pub fn envelope_target(
    reward: &[f64],
    done: bool,
    next_q: &[Value],
    next_budget: usize,
    omega: &[f64],
    sign: &[f64],
    how: Aggregate,
    gamma_discount: f64,
) -> Vec<f64> {
    if done || gamma_discount == 0.0 {
        return reward.to_vec();
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for q in next_q {
        let a = greedy_action(q, omega, sign, next_budget);
        let qbar = aggregate_q(q, &a, how);
        let score = scalarize(&qbar, omega, sign);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, qbar));
        }
    }
    let qbar = best.map(|(_, v)| v).unwrap_or_else(|| vec![0.0; reward.len()]);
    reward.iter().zip(&qbar).map(|(r, q)| r + gamma_discount * q).collect()
}

#[derive(Clone, Debug)]
pub struct LossParts {
    pub total: Value,
    pub vector: f64,
    pub scalar: f64,
}

/// `(1−λ)·mean‖y − Q̄‖² + λ·mean|ω·sign⊙(y − Q̄)|` for `(transition, ω)` pairs.
pub fn agent_loss(
    tape: &mut Tape,
    net: &QNetwork,
    pairs: &[(&Transition, &[f64])],
    targets: &[Vec<f64>],
    sign: &[f64],
    how: Aggregate,
    lambda: f64,
) -> Result<LossParts> {
    if pairs.is_empty() {
        return Err(Error::invalid("empty agent batch"));
    }
    if targets.len() != pairs.len() {
        return Err(Error::shape("agent_loss", &[pairs.len()], &[targets.len()]));
    }
    if !(0.0..=LAMBDA_MAX).contains(&lambda) {
        return Err(Error::invalid(format!("λ = {lambda} outside [0, {LAMBDA_MAX}]")));
    }
    let d = sign.len();
    let p = pairs.len();
    let mut inputs = Vec::new();
    let mut rows = 0;
    let mut selector = Vec::new();
    for (t, omega) in pairs {
        let chosen: Vec<usize> = (0..t.action.len()).filter(|&i| t.action[i]).collect();
        inputs.extend(network_inputs(&t.state, omega, chosen.iter().copied()));
        let w = match how {
            Aggregate::Mean if !chosen.is_empty() => 1.0 / chosen.len() as f64,
            _ => 1.0,
        };
        selector.push((rows, chosen.len(), w));
        rows += chosen.len();
    }
    let qbar = if rows == 0 {
        Value::zeros(&[p, d])
    } else {
        let x = Value::new(vec![rows, net.input_width()], inputs)?;
        let q = net.forward(tape, &x)?;
        let mut sel = vec![0.0; p * rows];
        for (k, &(start, len, w)) in selector.iter().enumerate() {
            for r in start..start + len {
                sel[k * rows + r] = w;
            }
        }
        tape.matmul(&Value::new(vec![p, rows], sel)?, &q)?
    };
    let y = Value::new(vec![p, d], targets.concat())?;
    let diff = tape.sub(&y, &qbar)?;
    let sq = tape.square(&diff)?;
    let la = tape.sum(&sq)?;
    let la = tape.scale(&la, 1.0 / p as f64)?;
    let weights: Vec<f64> = pairs
        .iter()
        .flat_map(|(_, omega)| omega.iter().zip(sign).map(|(w, s)| w * s).collect::<Vec<_>>())
        .collect();
    let weighted = tape.mul(&diff, &Value::new(vec![p, d], weights)?)?;
    let gap = tape.matmul(&weighted, &Value::filled(&[d, 1], 1.0))?;
    let gap = tape.abs(&gap)?;
    let lb = tape.sum(&gap)?;
    let lb = tape.scale(&lb, 1.0 / p as f64)?;
    let (va, vb) = (la.item(), lb.item());
    let a = tape.scale(&la, 1.0 - lambda)?;
    let b = tape.scale(&lb, lambda)?;
    let total = tape.add(&a, &b)?;
    Ok(LossParts {
        total,
        vector: va,
        scalar: vb,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PodaAgent {
    pub config: AgentConfig,
    pub online: QNetwork,
    pub target: QNetwork,
    pub optimizer: AdamState,
    pub replay: ReplayBuffer,
    pub updates: u64,
}

impl PodaAgent {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, state_width: usize, config: AgentConfig) -> Self {
        let d = config.objectives();
        let online = QNetwork::new(rng, state_width + d, &config.hidden, d);
        Self::with_network(online, config)
    }

    pub fn with_network(online: QNetwork, config: AgentConfig) -> Self {
        let target = online.clone();
        let optimizer = AdamState::new(&online.params(), config.learning_rate);
        let replay = ReplayBuffer::new(config.replay_capacity);
        PodaAgent {
            config,
            online,
            target,
            optimizer,
            replay,
            updates: 0,
        }
    }

    pub fn objectives(&self) -> usize {
        self.config.objectives()
    }

    pub fn q_values(&self, state: &Value, omega: &[f64]) -> Result<Value> {
        per_node_q(&mut Tape::new(), state, omega, &self.online)
    }

    pub fn act<R: Rng + ?Sized>(
        &self,
        state: &Value,
        omega: &[f64],
        budget: usize,
        epsilon: f64,
        rng: &mut R,
    ) -> Result<Vec<bool>> {
        let q = self.q_values(state, omega)?;
        Ok(select_action(&q, omega, &self.config.sign_mask, budget, epsilon, rng))
    }

    pub fn store(&mut self, t: Transition) {
        self.replay.push(t);
    }

    /// Target-network Q matrices of `next_state` under each candidate.
    fn next_values(&self, next_state: &Value, candidates: &[&[f64]]) -> Result<Vec<Value>> {
        let n = next_state.rows();
        let d = self.objectives();
        let mut inputs = Vec::with_capacity(candidates.len() * n * self.target.input_width());
        for omega in candidates {
            inputs.extend(network_inputs(next_state, omega, 0..n));
        }
        let x = Value::new(vec![candidates.len() * n, self.target.input_width()], inputs)?;
        let q = self.target.forward(&mut Tape::new(), &x)?;
        (0..candidates.len())
            .map(|c| Value::new(vec![n, d], q.data()[c * n * d..(c + 1) * n * d].to_vec()))
            .collect()
    }

    /// Target for `(t, ω)` with the envelope max over `candidates ∪ {ω}`.
    pub fn compute_target(&self, t: &Transition, omega: &[f64], candidates: &[Vec<f64>]) -> Result<Vec<f64>> {
        validate_preference(omega, self.objectives())?;
        if t.done || self.config.gamma_discount == 0.0 {
            return Ok(t.reward.clone());
        }
        let mut all: Vec<&[f64]> = candidates.iter().map(Vec::as_slice).collect();
        all.push(omega);
        let next = self.next_values(&t.next_state, &all)?;
        Ok(envelope_target(
            &t.reward,
            t.done,
            &next,
            t.next_budget,
            omega,
            &self.config.sign_mask,
            self.config.aggregate,
            self.config.gamma_discount,
        ))
    }

    /// One gradient step on `N_τ` replayed transitions crossed with `N_ω`
    /// sampled preferences. Returns the loss, or `None` when the buffer is
    /// empty.
    pub fn update<R: Rng + ?Sized>(&mut self, rng: &mut R, lambda: f64) -> Result<Option<f64>> {
        if self.replay.is_empty() {
            return Ok(None);
        }
        let d = self.objectives();
        let prefs: Vec<Vec<f64>> = (0..self.config.batch_preferences.max(1))
            .map(|_| sample_preference(rng, d))
            .collect();
        let batch: Vec<Transition> = self
            .replay
            .sample(rng, self.config.batch_transitions)
            .into_iter()
            .cloned()
            .collect();
        let mut pairs: Vec<(&Transition, &[f64])> = Vec::new();
        let mut targets = Vec::new();
        let pref_refs: Vec<&[f64]> = prefs.iter().map(Vec::as_slice).collect();
        for t in &batch {
            let next = if t.done || self.config.gamma_discount == 0.0 {
                Vec::new()
            } else {
                self.next_values(&t.next_state, &pref_refs)?
            };
            for omega in &prefs {
                targets.push(envelope_target(
                    &t.reward,
                    t.done,
                    &next,
                    t.next_budget,
                    omega,
                    &self.config.sign_mask,
                    self.config.aggregate,
                    self.config.gamma_discount,
                ));
                pairs.push((t, omega.as_slice()));
            }
        }
        let mut tape = Tape::recording();
        let loss = agent_loss(
            &mut tape,
            &self.online,
            &pairs,
            &targets,
            &self.config.sign_mask,
            self.config.aggregate,
            lambda,
        )?;
        let value = loss.total.item();
        if loss.total.node().is_none() {
            // no chosen nodes in the batch: nothing depends on the network
            self.after_update()?;
            return Ok(Some(value));
        }
        let mut grads = tape.backward(&loss.total)?;
        grads.clip_global_norm(&self.online.params(), self.config.grad_clip);
        self.optimizer.step_with(&mut self.online.params_mut(), &grads)?;
        self.after_update()?;
        Ok(Some(value))
    }

    fn after_update(&mut self) -> Result<()> {
        self.updates += 1;
        if self.config.target_sync > 0 && self.updates % self.config.target_sync == 0 {
            self.sync_target()?;
        }
        Ok(())
    }

    pub fn sync_target(&mut self) -> Result<()> {
        self.target.assign_from(&self.online)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn q_from_u(u: &[f64]) -> Value {
        // one-hot accuracy column carries u directly
        let rows: Vec<Vec<f64>> = u.iter().map(|&x| vec![x, 0.0, 0.0, 0.0]).collect();
        Value::from_rows(&rows).unwrap()
    }

    #[test]
    fn greedy_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = q_from_u(&[0.5, -0.1, 0.9, 0.2]);
        let w = one_hot(4, 0);
        let a = select_action(&q, &w, &SIGN_MASK, 2, 0.0, &mut rng);
        assert_eq!(a, vec![true, false, true, false]);
        let neg = q_from_u(&[-0.5, -0.1]);
        assert_eq!(select_action(&neg, &w, &SIGN_MASK, 2, 0.0, &mut rng), vec![false, false]);
        assert_eq!(select_action(&q, &w, &SIGN_MASK, 0, 0.0, &mut rng), vec![false; 4]);
    }

    #[test]
    fn exploration_replays_documented_stream() {
        let q = q_from_u(&[0.5, -0.1, 0.9, 0.2, 0.3]);
        let w = uniform_preference(4);
        let a = select_action(&q, &w, &SIGN_MASK, 3, 1.0, &mut ChaCha8Rng::seed_from_u64(4));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let _: f64 = rng.random();
        let size = rng.random_range(0..=3usize);
        let mut expect = vec![false; 5];
        for i in sample(&mut rng, 5, size) {
            expect[i] = true;
        }
        assert_eq!(a, expect);
    }

    #[test]
    fn target_terminal_and_undiscounted() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = AgentConfig {
            hidden: vec![4],
            ..AgentConfig::default()
        };
        let mut agent = PodaAgent::new(&mut rng, 3, cfg);
        let t = Transition {
            state: Value::filled(&[2, 3], 0.1),
            action: vec![true, false],
            reward: vec![1.0, 0.0, 0.2, 0.5],
            next_state: Value::filled(&[2, 3], 0.3),
            next_budget: 1,
            done: true,
        };
        let w = uniform_preference(4);
        assert_eq!(agent.compute_target(&t, &w, &[]).unwrap(), t.reward);
        let mut open = t.clone();
        open.done = false;
        agent.config.gamma_discount = 0.0;
        assert_eq!(agent.compute_target(&open, &w, &[]).unwrap(), t.reward);
    }

    fn pair_fixture() -> (QNetwork, Vec<Transition>) {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = QNetwork::new(&mut rng, 2 + 4, &[3], 4);
        let mk = |a: Vec<bool>, s: f64| Transition {
            state: Value::new(vec![3, 2], (0..6).map(|k| s + k as f64 * 0.1).collect()).unwrap(),
            action: a,
            reward: vec![0.0; 4],
            next_state: Value::zeros(&[3, 2]),
            next_budget: 1,
            done: true,
        };
        (net, vec![mk(vec![true, false, true], 0.2), mk(vec![false, true, false], -0.3)])
    }

    #[test]
    fn loss_hand_arithmetic() {
        let (net, ts) = pair_fixture();
        let omegas = [vec![0.25; 4], vec![0.1, 0.2, 0.3, 0.4]];
        let qbars: Vec<Vec<f64>> = ts
            .iter()
            .zip(&omegas)
            .map(|(t, w)| {
                let q = per_node_q(&mut Tape::new(), &t.state, w, &net).unwrap();
                aggregate_q(&q, &t.action, Aggregate::Mean)
            })
            .collect();
        let ys = vec![vec![1.0, 0.5, 0.25, 0.0], vec![-0.5, 0.0, 0.1, 2.0]];
        let pairs: Vec<(&Transition, &[f64])> = ts.iter().zip(&omegas).map(|(t, w)| (t, w.as_slice())).collect();

        let exact: Vec<Vec<f64>> = qbars.clone();
        let zero = agent_loss(&mut Tape::new(), &net, &pairs, &exact, &SIGN_MASK, Aggregate::Mean, 0.3).unwrap();
        assert!(zero.total.item().abs() < 1e-15);

        let mut la = 0.0;
        let mut lb = 0.0;
        for k in 0..2 {
            let diff: Vec<f64> = (0..4).map(|j| ys[k][j] - qbars[k][j]).collect();
            la += diff.iter().map(|x| x * x).sum::<f64>() / 2.0;
            lb += scalarize(&diff, &omegas[k], &SIGN_MASK).abs() / 2.0;
        }
        for lambda in [0.0, 0.25, 0.6] {
            let got = agent_loss(&mut Tape::new(), &net, &pairs, &ys, &SIGN_MASK, Aggregate::Mean, lambda).unwrap();
            assert!((got.total.item() - ((1.0 - lambda) * la + lambda * lb)).abs() < 1e-10);
            assert!((got.vector - la).abs() < 1e-10 && (got.scalar - lb).abs() < 1e-10);
        }
        assert!(agent_loss(&mut Tape::new(), &net, &[], &[], &SIGN_MASK, Aggregate::Mean, 0.0).is_err());
    }

    #[test]
    fn loss_gradients() {
        let (mut net, ts) = pair_fixture();
        let omegas = [vec![0.25; 4], vec![0.1, 0.2, 0.3, 0.4]];
        let ys = vec![vec![1.0, 0.5, 0.25, 0.0], vec![-0.5, 0.0, 0.1, 2.0]];
        let r = crate::numerics::GradCheck::default()
            .params(&mut net, |tape, net| {
                let pairs: Vec<(&Transition, &[f64])> =
                    ts.iter().zip(&omegas).map(|(t, w)| (t, w.as_slice())).collect();
                Ok(agent_loss(tape, net, &pairs, &ys, &SIGN_MASK, Aggregate::Mean, 0.4)?.total)
            })
            .unwrap();
        assert!(r.passed(1e-4), "{r:?}");
    }

    proptest! {
        #[test]
        fn actions_respect_budget(seed in 0u64..2000, budget in 0usize..6, eps in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = Value::new(vec![8, 4], (0..32).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let w = sample_preference(&mut rng, 4);
            let a = select_action(&q, &w, &SIGN_MASK, budget, eps, &mut rng);
            prop_assert!(a.iter().filter(|&&x| x).count() <= budget);
        }

        #[test]
        fn one_hot_ranks_by_masked_column(seed in 0u64..500, k in 0usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = Value::new(vec![6, 4], (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let a = greedy_action(&q, &one_hot(4, k), &SIGN_MASK, 6);
            for i in 0..6 {
                prop_assert_eq!(a[i], SIGN_MASK[k] * q.at(i, k) > 0.0);
            }
        }

        #[test]
        fn positive_scaling_keeps_choice(seed in 0u64..500, c in 0.01f64..100.0, budget in 0usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
            let q = Value::new(vec![6, 4], data.clone()).unwrap();
            let qs = Value::new(vec![6, 4], data.iter().map(|x| x * c).collect()).unwrap();
            let w = sample_preference(&mut rng, 4);
            prop_assert_eq!(greedy_action(&q, &w, &SIGN_MASK, budget), greedy_action(&qs, &w, &SIGN_MASK, budget));
        }
    }
}
