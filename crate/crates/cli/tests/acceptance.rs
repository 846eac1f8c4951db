//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use asterlab_cli::commands::{self, Baseline, EvalReport, PolicySource};
use asterlab_cli::{Objective, RunConfig};
use asterlab_core::agent::{agent_loss, AgentConfig, Aggregate, PodaAgent, QNetwork, Transition};
use asterlab_core::data::{synthesize, Pattern};
use asterlab_core::env::{assign, Census};
use asterlab_core::graph_learning::{apply_mask, compute_affinity, masked_propagation, normalize_adjacency, NodeEmbeddings, ResourceMask};
use asterlab_core::metrics::{
    average_distance, average_early_time, cost_effectiveness, false_alarm_rate, resource_utilization, success_rate,
    MetricSet, OutcomeLog, StepRecord,
};
use asterlab_core::model::{forecast_loss, Forecaster, ModelConfig};
use asterlab_core::numerics::{GradCheck, GradReport};
use asterlab_core::state::{fuse, select_horizon};
use asterlab_core::trainer::{TrainConfig, Trainer};
use asterlab_core::{Parameterized, Tape, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

struct WarnCounter;

static WARNINGS: AtomicUsize = AtomicUsize::new(0);

impl log::Log for WarnCounter {
    fn enabled(&self, m: &log::Metadata) -> bool {
        m.level() <= log::Level::Warn
    }

    fn log(&self, r: &log::Record) {
        if r.level() == log::Level::Warn {
            WARNINGS.fetch_add(1, Ordering::SeqCst);
        }
    }

    fn flush(&self) {}
}

fn warnings() -> usize {
    WARNINGS.load(Ordering::SeqCst)
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_value(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Value {
    let n = shape.iter().product();
    Value::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Weighted sum so every output coordinate carries a distinct gradient.
fn project(tape: &mut Tape, y: &Value, seed: u64) -> asterlab_core::Result<Value> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = random_value(&mut rng, y.shape(), -1.0, 1.0);
    let p = tape.mul(y, &w)?;
    tape.sum(&p)
}

// ---------------------------------------------------------------- 1

fn tiny_model(nodes: usize) -> ModelConfig {
    ModelConfig {
        embed_dim: 3,
        conv_channels: 3,
        features: 4,
        heads: 2,
        ffn_hidden: 5,
        decoder_hidden: 5,
        k_max: 4,
        short_window: 8,
        ..ModelConfig::new(nodes)
    }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst = GradReport::default();
    let mut checks = 0usize;
    let mut record = |name: &str, seed: u64, r: asterlab_core::Result<GradReport>| -> Result<(), String> {
        let r = r.map_err(|e| format!("{name} (seed {seed}): {e}"))?;
        ensure!(r.passed(1e-4), "{name} (seed {seed}): max relative error {:.3e} at {:?}", r.max_rel_error, r.worst);
        if r.max_rel_error >= worst.max_rel_error {
            worst = r;
        }
        checks += 1;
        Ok(())
    };
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gc = GradCheck {
            seed,
            ..GradCheck::default()
        };
        let a = random_value(&mut rng, &[3, 4], -1.5, 1.5);
        let b = random_value(&mut rng, &[3, 4], -1.5, 1.5);
        let m = random_value(&mut rng, &[4, 2], -1.0, 1.0);
        let pos = random_value(&mut rng, &[3, 4], 0.2, 2.0);
        let bias_c = random_value(&mut rng, &[4], -1.0, 1.0);
        let bias_r = random_value(&mut rng, &[3], -1.0, 1.0);
        let x3 = random_value(&mut rng, &[2, 3, 9], -1.0, 1.0);
        let kernel = random_value(&mut rng, &[2, 3, 3], -1.0, 1.0);
        let s = random_value(&mut rng, &[1], -1.0, 1.0);

        macro_rules! unary {
            ($name:literal, $x:expr, $op:ident) => {
                record($name, seed, gc.inputs(&[$x.clone()], |t, v| {
                    let y = t.$op(&v[0])?;
                    project(t, &y, seed)
                }))?
            };
        }
        unary!("tanh", a, tanh);
        unary!("sigmoid", a, sigmoid);
        unary!("relu", a, relu);
        unary!("square", a, square);
        unary!("abs", a, abs);
        unary!("transpose", a, transpose);
        unary!("row_normalize", pos, row_normalize);
        for (name, op) in [("add", 0), ("sub", 1), ("mul", 2)] {
            record(name, seed, gc.inputs(&[a.clone(), b.clone()], |t, v| {
                let y = match op {
                    0 => t.add(&v[0], &v[1])?,
                    1 => t.sub(&v[0], &v[1])?,
                    _ => t.mul(&v[0], &v[1])?,
                };
                project(t, &y, seed)
            }))?;
        }
        record("mul (broadcast)", seed, gc.inputs(&[a.clone(), s.clone()], |t, v| {
            let y = t.mul(&v[0], &v[1])?;
            project(t, &y, seed)
        }))?;
        record("scale", seed, gc.inputs(&[a.clone()], |t, v| {
            let y = t.scale(&v[0], -1.7)?;
            project(t, &y, seed)
        }))?;
        record("add_scalar", seed, gc.inputs(&[a.clone()], |t, v| {
            let y = t.add_scalar(&v[0], 0.3)?;
            let y = t.square(&y)?;
            project(t, &y, seed)
        }))?;
        record("sum", seed, gc.inputs(&[a.clone()], |t, v| {
            let y = t.square(&v[0])?;
            t.sum(&y)
        }))?;
        record("mean", seed, gc.inputs(&[a.clone()], |t, v| {
            let y = t.square(&v[0])?;
            t.mean(&y)
        }))?;
        record("matmul", seed, gc.inputs(&[a.clone(), m.clone()], |t, v| {
            let y = t.matmul(&v[0], &v[1])?;
            project(t, &y, seed)
        }))?;
        record("add_bias", seed, gc.inputs(&[a.clone(), bias_c.clone(), bias_r.clone()], |t, v| {
            let y = t.add_bias(&v[0], &v[1], 1)?;
            let y = t.add_bias(&y, &v[2], 0)?;
            let y = t.square(&y)?;
            project(t, &y, seed)
        }))?;
        for axis in [0, 1] {
            record("softmax", seed, gc.inputs(&[a.clone()], |t, v| {
                let y = t.softmax(&v[0], axis)?;
                project(t, &y, seed)
            }))?;
        }
        record("layer_norm", seed, gc.inputs(&[a.clone(), bias_c.clone(), bias_c.clone()], |t, v| {
            let y = t.layer_norm(&v[0], &v[1], &v[2])?;
            project(t, &y, seed)
        }))?;
        for dilation in [1, 2, 3] {
            record("conv1d", seed, gc.inputs(&[x3.clone(), kernel.clone()], |t, v| {
                let y = t.conv1d(&v[0], &v[1], dilation)?;
                project(t, &y, seed)
            }))?;
        }
        record("reshape/slice/concat", seed, gc.inputs(&[a.clone(), b.clone()], |t, v| {
            let r = t.reshape(&v[0], &[4, 3])?;
            let r = t.reshape(&r, &[3, 4])?;
            let left = t.slice(&r, 1, 1, 2)?;
            let right = t.slice(&v[1], 1, 0, 3)?;
            let y = t.concat(&[&left, &right], 1)?;
            let y = t.square(&y)?;
            project(t, &y, seed)
        }))?;

        let mut emb = NodeEmbeddings::new(&mut rng, 4, 3, 3.0);
        let mask = ResourceMask::from_census(&[1, 0, 2, 1]);
        record(
            "adjacency",
            seed,
            GradCheck {
                seed,
                ..GradCheck::default()
            }
            .params(&mut emb, |t, e| {
                let y = masked_propagation(t, e, &mask)?;
                project(t, &y, seed)
            }),
        )?;

        let mut model = Forecaster::new(&mut rng, tiny_model(3)).map_err(err)?;
        let x = random_value(&mut rng, &[3, 3, 52], -1.0, 1.0);
        let truth: Vec<f64> = (0..12).map(|k| (k as f64 * 0.37 + seed as f64).sin()).collect();
        let census = Census {
            per_node: vec![(seed % 2) as usize, 1, 2],
            idle: 3 + (seed % 2) as usize,
        };
        record(
            "encoder-decoder",
            seed,
            GradCheck {
                seed,
                samples_per_tensor: Some(4),
                ..GradCheck::default()
            }
            .params(&mut model, |t, m| {
                let out = m.forward(t, &x, &census, 5)?;
                forecast_loss(t, &out.forecast.values, &truth, out.forecast.horizon)
            }),
        )?;

        let mut net = QNetwork::new(&mut rng, 6 + 4, &[6], 4);
        let transitions: Vec<Transition> = (0..2)
            .map(|_| Transition {
                state: random_value(&mut rng, &[3, 6], -1.0, 1.0),
                action: vec![true, rng.random(), true],
                reward: (0..4).map(|_| rng.random_range(0.0..1.0)).collect(),
                next_state: random_value(&mut rng, &[3, 6], -1.0, 1.0),
                next_budget: 2,
                done: false,
            })
            .collect();
        let omegas = [vec![0.1, 0.2, 0.3, 0.4], vec![0.7, 0.1, 0.1, 0.1]];
        let targets: Vec<Vec<f64>> = (0..2).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        record(
            "agent loss",
            seed,
            GradCheck {
                seed,
                ..GradCheck::default()
            }
            .params(&mut net, |t, n| {
                let pairs: Vec<(&Transition, &[f64])> =
                    transitions.iter().zip(&omegas).map(|(tr, w)| (tr, w.as_slice())).collect();
                Ok(agent_loss(t, n, &pairs, &targets, &[1.0, -1.0, -1.0, 1.0], Aggregate::Mean, 0.3)?.total)
            }),
        )?;
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:.1?}");
    Ok(format!(
        "{checks} checks over 10 seeds, worst relative error {:.2e}, {elapsed:.1?}",
        worst.max_rel_error
    ))
}

// ---------------------------------------------------------------- 2

fn brute_force(cost: &[Vec<f64>]) -> f64 {
    let suppliers = cost.len();
    let demands = cost[0].len();
    fn go(cost: &[Vec<f64>], d: usize, used: &mut [bool], skips: usize, acc: f64, best: &mut f64) {
        if d == cost[0].len() {
            *best = best.min(acc);
            return;
        }
        for s in 0..cost.len() {
            if !used[s] {
                used[s] = true;
                go(cost, d + 1, used, skips, acc + cost[s][d], best);
                used[s] = false;
            }
        }
        if skips > 0 {
            go(cost, d + 1, used, skips - 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; suppliers], demands.saturating_sub(suppliers), 0.0, &mut best);
    best
}

fn assignment_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..200 {
        let s = rng.random_range(1..=7);
        let d = rng.random_range(1..=7);
        let cost: Vec<Vec<f64>> = (0..s)
            .map(|_| (0..d).map(|_| rng.random_range(0..50) as f64).collect())
            .collect();
        let m = assign(&cost);
        let want = brute_force(&cost);
        ensure!(m.cost == want, "instance {i} ({s}x{d}): {} vs brute force {want}", m.cost);
        ensure!(m.served() == s.min(d), "instance {i}: served {}", m.served());
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:.1?}");
    Ok(format!("200 instances up to 7x7 exact, {elapsed:.1?}"))
}

// ---------------------------------------------------------------- 3

fn masking_guarantees() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut masked_entries = 0;
    let mut worst_row = 0.0f64;
    for trial in 0..50u64 {
        let n = rng.random_range(2..=8);
        let bits: Vec<bool> = (0..n * n).map(|_| rng.random_bool(0.5)).collect();
        let mask = ResourceMask::from_bits(n, bits).map_err(err)?;
        let emb = NodeEmbeddings::new(&mut rng, n, 4, 3.0);
        let mut weights = vec![0.0; n * n];
        let mut tape = Tape::recording();
        let a_star = compute_affinity(&mut tape, &emb).map_err(err)?;
        let a = apply_mask(&mut tape, &a_star, &mask).map_err(err)?;
        for i in 0..n {
            for j in 0..n {
                if !mask.get(i, j) {
                    ensure!(a.at(i, j).to_bits() == 0, "mask {trial}: A[{i},{j}] = {:e}", a.at(i, j));
                    weights[i * n + j] = rng.random_range(0.5..2.0);
                    masked_entries += 1;
                }
            }
        }
        // a loss supported only on masked entries must not move any parameter
        let w = Value::new(vec![n, n], weights).unwrap();
        let picked = tape.mul(&a, &w).map_err(err)?;
        let loss = tape.sum(&picked).map_err(err)?;
        let grads = tape.backward(&loss).map_err(err)?;
        for p in emb.params() {
            if let Some(g) = grads.param(p) {
                ensure!(g.iter().all(|x| x.to_bits() == 0), "mask {trial}: non-zero parameter gradient");
            }
        }
        let norm = normalize_adjacency(&mut Tape::new(), &a).map_err(err)?;
        for i in 0..n {
            let row: f64 = norm.row(i).iter().sum();
            worst_row = worst_row.max((row - 1.0).abs());
            for j in 0..n {
                if i != j && !mask.get(i, j) {
                    ensure!(norm.at(i, j) == 0.0, "mask {trial}: normalised entry ({i},{j}) leaked");
                }
            }
        }
        ensure!(worst_row <= 1e-12, "mask {trial}: row sum off by {worst_row:e}");
    }
    Ok(format!(
        "50 masks, {masked_entries} masked entries exactly 0 with 0 gradients, max row-sum error {worst_row:.1e}"
    ))
}

// ---------------------------------------------------------------- 4

fn fusion_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let short = random_value(&mut rng, &[5, 8], -3.0, 3.0);
    let long = random_value(&mut rng, &[5, 8], -3.0, 3.0);
    let bits = |v: &Value| v.data().iter().map(|x| x.to_bits()).collect::<Vec<u64>>();
    let mut tape = Tape::recording();
    let s = tape.leaf(&short);
    let l = tape.leaf(&long);
    let at0 = fuse(&mut tape, &s, &l, 0.0).map_err(err)?;
    let at1 = fuse(&mut tape, &s, &l, 1.0).map_err(err)?;
    ensure!(bits(&at0) == bits(&short), "gamma = 0 is not the short branch bitwise");
    ensure!(bits(&at1) == bits(&long), "gamma = 1 is not the long branch bitwise");
    ensure!(select_horizon(0.5, 12) == 6, "select_horizon(0.5, 12) = {}", select_horizon(0.5, 12));
    let sweep: Vec<usize> = (0..=100).map(|i| select_horizon(i as f64 / 100.0, 12)).collect();
    ensure!(sweep.windows(2).all(|w| w[0] <= w[1]), "horizon not monotone: {sweep:?}");
    ensure!(sweep[0] == 1 && sweep[100] == 12, "sweep endpoints {} and {}", sweep[0], sweep[100]);
    Ok("bitwise endpoints, k(0.5) = 6, monotone over 101 points".into())
}

// ---------------------------------------------------------------- 5

const DISCOUNT: f64 = 0.9;

fn chain_step(s: usize, a: usize) -> (f64, usize) {
    match (s, a) {
        (0, 0) => (0.0, 1),
        (0, _) => (0.2, 0),
        (1, 0) => (0.0, 0),
        _ => (1.0, 1),
    }
}

fn chain_rows(s: usize) -> Value {
    let mut data = vec![0.0; 8];
    for a in 0..2 {
        data[a * 4 + s] = 1.0;
        data[a * 4 + 2 + a] = 1.0;
    }
    Value::new(vec![2, 4], data).unwrap()
}

fn scalar_q(net: &QNetwork, s: usize, a: usize) -> f64 {
    let mut h = chain_rows(s).row(a).to_vec();
    h.push(1.0);
    let last = net.layers.len() - 1;
    for (l, layer) in net.layers.iter().enumerate() {
        let (rows, cols) = (layer.weight.shape()[0], layer.weight.shape()[1]);
        let mut out = layer.bias.data().to_vec();
        for j in 0..cols {
            for i in 0..rows {
                out[j] += h[i] * layer.weight.data()[i * cols + j];
            }
        }
        if l < last {
            out.iter_mut().for_each(|x| *x = x.max(0.0));
        }
        h = out;
    }
    h[0]
}

fn scalar_degeneration() -> Outcome {
    let mut vi = [[0.0f64; 2]; 2];
    for _ in 0..2000 {
        let v = [vi[0][0].max(vi[0][1]), vi[1][0].max(vi[1][1])];
        for s in 0..2 {
            for a in 0..2 {
                let (r, n) = chain_step(s, a);
                vi[s][a] = r + DISCOUNT * v[n];
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let config = AgentConfig {
        sign_mask: vec![1.0],
        hidden: vec![16],
        gamma_discount: DISCOUNT,
        learning_rate: 1e-2,
        target_sync: 25,
        replay_capacity: 500,
        batch_transitions: 8,
        batch_preferences: 1,
        aggregate: Aggregate::Mean,
        grad_clip: 5.0,
    };
    let mut online = QNetwork::new(&mut rng, 5, &config.hidden, 1);
    online.set_output_bias(5.0);
    let mut agent = PodaAgent::with_network(online, config);
    let omega = [1.0];
    let mut worst = 0.0f64;
    let mut s = 0;
    for step in 0..2000 {
        let rows = chain_rows(s);
        let a = if rng.random::<f64>() < 0.3 {
            rng.random_range(0..2)
        } else {
            let q = agent.q_values(&rows, &omega).map_err(err)?;
            usize::from(q.at(0, 0) < q.at(1, 0))
        };
        let (r, n) = chain_step(s, a);
        let t = Transition {
            state: rows,
            action: (0..2).map(|i| i == a).collect(),
            reward: vec![r],
            next_state: chain_rows(n),
            next_budget: 1,
            done: false,
        };
        let y_ref = r + DISCOUNT * scalar_q(&agent.target, n, 0).max(scalar_q(&agent.target, n, 1));
        let y = agent.compute_target(&t, &omega, &[]).map_err(err)?;
        let q_ref = scalar_q(&agent.online, s, a);
        let loss = agent_loss(&mut Tape::new(), &agent.online, &[(&t, &omega[..])], &[y.clone()], &[1.0], Aggregate::Mean, 0.0)
            .map_err(err)?;
        let gap = y_ref - q_ref;
        let e = (y[0] - y_ref).abs().max((loss.total.item() - gap * gap).abs());
        worst = worst.max(e);
        ensure!(e < 1e-8, "step {step}: target/loss off by {e:e}");
        agent.store(t);
        agent.update(&mut rng, 0.0).map_err(err)?;
        s = n;
    }
    for st in 0..2 {
        let q = agent.q_values(&chain_rows(st), &omega).map_err(err)?;
        let greedy = usize::from(q.at(0, 0) < q.at(1, 0));
        let best = usize::from(vi[st][0] < vi[st][1]);
        ensure!(greedy == best, "state {st}: greedy {greedy}, value iteration {best} (Q = {:?})", q.data());
    }
    Ok(format!("2000 steps, max per-step deviation {worst:.1e}, greedy policy matches value iteration"))
}

// ---------------------------------------------------------------- 9

fn record(alloc: usize, succ: usize, fa: usize, dist: &[f64], norm: &[f64], dt: &[usize], idle: usize, events: usize, reward: f64) -> StepRecord {
    StepRecord {
        allocations: alloc,
        successes: succ,
        false_alarms: fa,
        distances: dist.to_vec(),
        normalized_distances: norm.to_vec(),
        delta_t: dt.to_vec(),
        idle_before: idle,
        events,
        scalarized_reward: reward,
    }
}

fn metric_audit() -> Outcome {
    let mut log = OutcomeLog::new();
    log.push(record(2, 1, 1, &[3.0, 4.0], &[0.3, 0.4], &[2], 3, 2, 0.5));
    log.push(record(1, 1, 0, &[5.0], &[0.5], &[4], 2, 1, 0.8));
    log.push(record(0, 0, 0, &[], &[], &[], 1, 1, 0.0));
    let hand = [
        ("SR", success_rate(&log), 2.0 / 4.0),
        ("FAR", false_alarm_rate(&log), 1.0 / 3.0),
        ("AD", average_distance(&log), 12.0 / 3.0),
        ("AET", average_early_time(&log), 6.0 / 2.0),
        ("RUR", resource_utilization(&log, 4).map_err(err)?, (2.0 / 4.0 + 1.0 / 4.0 + 0.0) / 3.0),
        ("CER", cost_effectiveness(&log), (0.5 / 1.35 + 0.8 / 1.5) / 2.0),
    ];
    for (name, got, want) in hand {
        ensure!((got - want).abs() <= 1e-10, "{name}: {got} vs hand value {want}");
    }
    let set = MetricSet::compute(&log, 4).map_err(err)?;
    ensure!(set.to_array().iter().zip(hand.iter()).all(|(a, h)| *a == h.1), "MetricSet disagrees");

    let before = warnings();
    let mut empty = OutcomeLog::new();
    empty.push(record(0, 0, 0, &[], &[], &[], 2, 0, 0.0));
    let degenerate = MetricSet::compute(&empty, 4).map_err(err)?;
    let fired = warnings() - before;
    ensure!(degenerate.to_array().iter().all(|&v| v == 0.0), "degenerate metrics {degenerate:?}");
    ensure!(fired >= 5, "only {fired} degenerate-denominator warnings");
    Ok(format!("six metrics match hand values to 1e-10, {fired} degenerate warnings"))
}

// ---------------------------------------------------------------- 10

fn persistence() -> Outcome {
    let (mut d, _) = synthesize(10, 6, 420, Pattern::Diurnal).map_err(err)?;
    d.normalize().map_err(err)?;
    let mut cfg = TrainConfig {
        epochs: 3,
        history: 56,
        warmup: 16,
        episode_len: 24,
        seed: 5,
        ..TrainConfig::default()
    };
    cfg.model = ModelConfig {
        conv_channels: 4,
        features: 8,
        heads: 2,
        ffn_hidden: 8,
        decoder_hidden: 8,
        embed_dim: 4,
        ..ModelConfig::new(6)
    };
    cfg.agent.hidden = vec![8];
    cfg.agent.batch_transitions = 8;
    cfg.agent.batch_preferences = 2;
    let mut a = Trainer::new(cfg.clone(), &d).map_err(err)?;
    a.run(&d).map_err(err)?;
    let mut b = Trainer::new(cfg.clone(), &d).map_err(err)?;
    b.run(&d).map_err(err)?;
    ensure!(a.log == b.log, "two identical runs produced different logs");

    let dir = tempfile::tempdir().map_err(err)?;
    let path = dir.path().join("state.ckpt");
    let mut c = Trainer::new(cfg, &d).map_err(err)?;
    c.run_epoch(&d).map_err(err)?;
    let cut = c.log.len();
    c.save(&path).map_err(err)?;
    drop(c);
    let mut resumed = Trainer::load(&path).map_err(err)?;
    resumed.run(&d).map_err(err)?;
    ensure!(resumed.log[cut..] == a.log[cut..], "resumed loss trace diverges");
    let bits = |t: &Trainer| t.log.iter().map(|r| r.forecast_loss.to_bits()).collect::<Vec<_>>();
    ensure!(bits(&resumed) == bits(&a), "forecast losses differ bitwise");
    Ok(format!("{} log rows identical, resume after row {cut} reproduces the rest exactly", a.log.len()))
}

// ---------------------------------------------------------------- 6, 7, 8, 11

/// Desk-scale model used by the training criteria.
const ACCEPTANCE_MODEL: &str = "\
conv_channels = 8
features = 32
";

fn run_config(text: &str, out: &Path) -> Result<RunConfig, String> {
    let mut cfg = RunConfig::from_str_at(&format!("{ACCEPTANCE_MODEL}{text}"), "acceptance").map_err(err)?;
    cfg.out = out.to_path_buf();
    Ok(cfg)
}

fn smoke(root: &Path) -> Outcome {
    let cfg = run_config("synthetic_nodes = 16\nsynthetic_steps = 600\nepochs = 2\nseed = 1\n", &root.join("smoke"))?;
    let start = Instant::now();
    let s = commands::train(&cfg, None).map_err(err)?;
    let elapsed = start.elapsed();
    for f in [commands::MODEL_FILE, commands::TRAIN_LOG_FILE, commands::SUMMARY_FILE] {
        ensure!(cfg.out.join(f).is_file(), "missing {f}");
    }
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:.1?}");
    let (first, last) = (s.epochs[0].forecast_loss, s.epochs[s.epochs.len() - 1].forecast_loss);
    ensure!(last < first, "forecast loss rose from {first} to {last}");
    Ok(format!("N = 16, T = 600, E = 2 in {elapsed:.1?}; forecast loss {first:.4} -> {last:.4}"))
}

const SCENARIO: &str = "\
synthetic_pattern = poisson_hotspots
synthetic_nodes = 16
synthetic_steps = 2000
synthetic_seed = 7
epochs = 3
seed = 7
";

struct Trained {
    checkpoint: PathBuf,
    elapsed: Duration,
}

fn train_level(root: &Path, level: &str) -> Result<Trained, String> {
    let cfg = run_config(&format!("{SCENARIO}resource_level = {level}\n"), &root.join(format!("train_{level}")))?;
    let start = Instant::now();
    commands::train(&cfg, None).map_err(err)?;
    Ok(Trained {
        checkpoint: cfg.out.join(commands::MODEL_FILE),
        elapsed: start.elapsed(),
    })
}

fn eval(root: &Path, level: &str, name: &str, source: PolicySource) -> Result<EvalReport, String> {
    let cfg = run_config(&format!("{SCENARIO}resource_level = {level}\ntrials = 3\nseed = 100\n"), &root.join(format!("eval_{level}_{name}")))?;
    commands::evaluate(&cfg, &source).map_err(err)
}

fn ordering(root: &Path, medium: &Trained) -> Outcome {
    ensure!(medium.elapsed < Duration::from_secs(600), "training took {:.1?}", medium.elapsed);
    let agent = eval(root, "medium", "agent", PolicySource::Checkpoint(medium.checkpoint.clone()))?;
    let random = eval(root, "medium", "random", PolicySource::Baseline(Baseline::Random))?;
    let ha = eval(root, "medium", "ha", PolicySource::Baseline(Baseline::HistoricalAverage))?;
    let oracle = eval(root, "medium", "oracle", PolicySource::Baseline(Baseline::Oracle))?;
    let gap = agent.mean.sr - random.mean.sr;
    ensure!(gap >= 0.05, "agent SR {:.4} vs random {:.4}", agent.mean.sr, random.mean.sr);
    ensure!(
        agent.mean.rur <= ha.mean.rur,
        "agent RUR {:.4} above full-utilisation RUR {:.4}",
        agent.mean.rur,
        ha.mean.rur
    );
    for other in [&agent, &random, &ha] {
        for (w, (o, x)) in oracle.windows.iter().zip(&other.windows).enumerate() {
            ensure!(o.sr >= x.sr, "window {w}: oracle SR {:.4} below {} SR {:.4}", o.sr, other.policy, x.sr);
        }
    }
    Ok(format!(
        "trained in {:.1?}; SR agent {:.4} / random {:.4} / HA {:.4} / oracle {:.4}; RUR agent {:.4} <= {:.4}; oracle dominates {} windows",
        medium.elapsed,
        agent.mean.sr,
        random.mean.sr,
        ha.mean.sr,
        oracle.mean.sr,
        agent.mean.rur,
        ha.mean.rur,
        oracle.windows.len()
    ))
}

fn robustness(root: &Path, medium: &Trained) -> Outcome {
    let mut srs = Vec::new();
    for level in ["low", "medium", "high"] {
        let ckpt = if level == "medium" {
            medium.checkpoint.clone()
        } else {
            train_level(root, level)?.checkpoint
        };
        srs.push(eval(root, level, "agent", PolicySource::Checkpoint(ckpt))?);
    }
    let line = srs
        .iter()
        .map(|r| format!("{} (S = {}) {:.4}", r.resource_level, r.resources, r.mean.sr))
        .collect::<Vec<_>>()
        .join(", ");
    ensure!(
        srs[0].mean.sr <= srs[1].mean.sr && srs[1].mean.sr <= srs[2].mean.sr,
        "SR not monotone: {line}"
    );
    Ok(format!("mean SR over 3 trials: {line}"))
}

fn preference_recovery(root: &Path, checkpoint: &Path) -> Outcome {
    let start = Instant::now();
    let mut hits = [0usize; 4];
    for task in Objective::ALL {
        for run in 0..20u64 {
            let cfg = run_config(
                &format!(
                    "synthetic_nodes = 16\nsynthetic_steps = 400\nsynthetic_seed = {}\nseed = {}\nresource_level = medium\n",
                    1000 + run,
                    run
                ),
                &root.join(format!("infer_{task}_{run}")),
            )?;
            let r = commands::infer(&cfg, checkpoint, task).map_err(err)?;
            let want: Vec<f64> = (0..4).map(|k| if k == task.index() { 1.0 } else { 0.0 }).collect();
            if r.omega == want {
                hits[task.index()] += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let line = Objective::ALL
        .iter()
        .map(|t| format!("{t} {}/20", hits[t.index()]))
        .collect::<Vec<_>>()
        .join(", ");
    ensure!(hits.iter().all(|&h| h >= 19), "recovery below 95%: {line}");
    ensure!(elapsed < Duration::from_secs(300), "took {elapsed:.1?}");
    Ok(format!("{line} in {elapsed:.1?}"))
}

// ---------------------------------------------------------------- main

fn run(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("criterion {id:>2} PASS  {name}: {detail} [{secs:.1}s]");
            true
        }
        Err(why) => {
            println!("criterion {id:>2} FAIL  {name}: {why} [{secs:.1}s]");
            false
        }
    }
}

fn main() {
    // `cargo test -- --list` and filters are not meaningful for this suite
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    log::set_logger(&WarnCounter).expect("logger installed once");
    log::set_max_level(log::LevelFilter::Warn);
    let root = tempfile::tempdir().expect("scratch directory");
    let root = root.path();

    let mut ok = Vec::new();
    ok.push(run(1, "gradient suite", gradient_suite));
    ok.push(run(2, "assignment oracle", assignment_oracle));
    ok.push(run(3, "masking guarantees", masking_guarantees));
    ok.push(run(4, "fusion and horizon identities", fusion_identities));
    ok.push(run(5, "scalar-DQN degeneration", scalar_degeneration));

    let medium = train_level(root, "medium");
    let medium_ref = medium.as_ref();
    ok.push(run(6, "preference recovery", || {
        let m = medium_ref.map_err(Clone::clone)?;
        preference_recovery(root, &m.checkpoint)
    }));
    ok.push(run(7, "ordering reproduction", || ordering(root, medium_ref.map_err(Clone::clone)?)));
    ok.push(run(8, "resource-level robustness", || robustness(root, medium_ref.map_err(Clone::clone)?)));
    ok.push(run(9, "metric hand-audit", metric_audit));
    ok.push(run(10, "determinism and persistence", persistence));
    ok.push(run(11, "end-to-end smoke", || smoke(root)));

    let passed = ok.iter().filter(|&&b| b).count();
    println!("acceptance: {passed}/{} criteria passed", ok.len());
    if passed != ok.len() {
        std::process::exit(1);
    }
}
