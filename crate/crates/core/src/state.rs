//! Branch fusion, node-wise attention refinement, horizon selection and
//! agent-state assembly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{glorot, ones, zeros, Param, Parameterized, Tape, Value};

/// `(1 − γ)·short + γ·long`. The endpoints return the chosen branch unchanged.
pub fn fuse(tape: &mut Tape, h_short: &Value, h_long: &Value, gamma: f64) -> Result<Value> {
    if h_short.shape() != h_long.shape() {
        return Err(Error::shape("fuse", h_short.shape(), h_long.shape()));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("fusion ratio {gamma} outside [0, 1]")));
    }
    if gamma == 0.0 {
        return Ok(h_short.clone());
    }
    if gamma == 1.0 {
        return Ok(h_long.clone());
    }
    let s = tape.scale(h_short, 1.0 - gamma)?;
    let l = tape.scale(h_long, gamma)?;
    tape.add(&s, &l)
}

/// `round(γ·k_max)` with halves rounded up, clamped to `[1, k_max]`.
pub fn select_horizon(gamma: f64, k_max: usize) -> usize {
    let k = (gamma * k_max as f64 + 0.5).floor();
    (k.max(1.0) as usize).min(k_max)
}

/// Horizon per node from each node's share of the pool. A node holding
/// its fair share `S/N` or more gets ratio 1.
pub fn select_horizon_per_node(idle_per_node: &[usize], total: usize, k_max: usize) -> Vec<usize> {
    let fair = total as f64 / idle_per_node.len().max(1) as f64;
    idle_per_node
        .iter()
        .map(|&c| {
            let g = if fair > 0.0 { (c as f64 / fair).min(1.0) } else { 0.0 };
            select_horizon(g, k_max)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttentionBlock {
    pub query: Param,
    pub key: Param,
    pub value: Param,
    pub output: Param,
    pub output_bias: Param,
    pub norm1_gain: Param,
    pub norm1_bias: Param,
    pub ffn_in: Param,
    pub ffn_in_bias: Param,
    pub ffn_out: Param,
    pub ffn_out_bias: Param,
    pub norm2_gain: Param,
    pub norm2_bias: Param,
    pub heads: usize,
}

impl AttentionBlock {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, features: usize, ffn_hidden: usize, heads: usize) -> Result<Self> {
        if heads == 0 || features % heads != 0 {
            return Err(Error::invalid(format!("{heads} heads do not divide width {features}")));
        }
        let f = features;
        Ok(AttentionBlock {
            query: glorot(rng, &[f, f], f, f),
            key: glorot(rng, &[f, f], f, f),
            value: glorot(rng, &[f, f], f, f),
            output: glorot(rng, &[f, f], f, f),
            output_bias: zeros(&[f]),
            norm1_gain: ones(&[f]),
            norm1_bias: zeros(&[f]),
            ffn_in: glorot(rng, &[f, ffn_hidden], f, ffn_hidden),
            ffn_in_bias: zeros(&[ffn_hidden]),
            ffn_out: glorot(rng, &[ffn_hidden, f], ffn_hidden, f),
            ffn_out_bias: zeros(&[f]),
            norm2_gain: ones(&[f]),
            norm2_bias: zeros(&[f]),
            heads,
        })
    }

    pub fn features(&self) -> usize {
        self.query.shape()[0]
    }
}

impl Parameterized for AttentionBlock {
    fn params(&self) -> Vec<&Param> {
        vec![
            &self.query,
            &self.key,
            &self.value,
            &self.output,
            &self.output_bias,
            &self.norm1_gain,
            &self.norm1_bias,
            &self.ffn_in,
            &self.ffn_in_bias,
            &self.ffn_out,
            &self.ffn_out_bias,
            &self.norm2_gain,
            &self.norm2_bias,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.query,
            &mut self.key,
            &mut self.value,
            &mut self.output,
            &mut self.output_bias,
            &mut self.norm1_gain,
            &mut self.norm1_bias,
            &mut self.ffn_in,
            &mut self.ffn_in_bias,
            &mut self.ffn_out,
            &mut self.ffn_out_bias,
            &mut self.norm2_gain,
            &mut self.norm2_bias,
        ]
    }
}

/// Multi-head self-attention over nodes, then a ReLU feed-forward layer,
/// each followed by residual addition and layer norm.
pub fn attention_refine(tape: &mut Tape, h: &Value, block: &AttentionBlock) -> Result<Value> {
    let f = block.features();
    if h.shape().len() != 2 || h.cols() != f {
        return Err(Error::shape("attention_refine", h.shape(), &[f]));
    }
    if f % block.heads != 0 {
        return Err(Error::invalid(format!("{} heads do not divide width {f}", block.heads)));
    }
    let dh = f / block.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let wq = tape.param(&block.query);
    let wk = tape.param(&block.key);
    let wv = tape.param(&block.value);
    let q = tape.matmul(h, &wq)?;
    let k = tape.matmul(h, &wk)?;
    let v = tape.matmul(h, &wv)?;
    let mut heads = Vec::with_capacity(block.heads);
    for i in 0..block.heads {
        let qi = tape.slice(&q, 1, i * dh, dh)?;
        let ki = tape.slice(&k, 1, i * dh, dh)?;
        let vi = tape.slice(&v, 1, i * dh, dh)?;
        let kt = tape.transpose(&ki)?;
        let scores = tape.matmul(&qi, &kt)?;
        let scores = tape.scale(&scores, scale)?;
        let attn = tape.softmax(&scores, 1)?;
        heads.push(tape.matmul(&attn, &vi)?);
    }
    let refs: Vec<&Value> = heads.iter().collect();
    let cat = if refs.len() == 1 { heads[0].clone() } else { tape.concat(&refs, 1)? };
    let wo = tape.param(&block.output);
    let bo = tape.param(&block.output_bias);
    let mha = tape.matmul(&cat, &wo)?;
    let mha = tape.add_bias(&mha, &bo, 1)?;
    let res = tape.add(h, &mha)?;
    let g1 = tape.param(&block.norm1_gain);
    let b1 = tape.param(&block.norm1_bias);
    let h1 = tape.layer_norm(&res, &g1, &b1)?;

    let w_in = tape.param(&block.ffn_in);
    let b_in = tape.param(&block.ffn_in_bias);
    let w_out = tape.param(&block.ffn_out);
    let b_out = tape.param(&block.ffn_out_bias);
    let z = tape.matmul(&h1, &w_in)?;
    let z = tape.add_bias(&z, &b_in, 1)?;
    let z = tape.relu(&z)?;
    let z = tape.matmul(&z, &w_out)?;
    let z = tape.add_bias(&z, &b_out, 1)?;
    let res2 = tape.add(&h1, &z)?;
    let g2 = tape.param(&block.norm2_gain);
    let b2 = tape.param(&block.norm2_bias);
    tape.layer_norm(&res2, &g2, &b2)
}

/// Per-node rows `fused ‖ idle count ‖ (x, y)`, width `F + 3`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    rows: Value,
}

impl AgentState {
    pub fn from_rows(rows: Value) -> Self {
        AgentState { rows: rows.detach() }
    }

    pub fn rows(&self) -> &Value {
        &self.rows
    }

    pub fn nodes(&self) -> usize {
        self.rows.rows()
    }

    pub fn width(&self) -> usize {
        self.rows.cols()
    }

    pub fn features(&self) -> usize {
        self.width() - 3
    }

    pub fn resource_column(&self) -> Vec<f64> {
        let f = self.features();
        (0..self.nodes()).map(|i| self.rows.at(i, f)).collect()
    }
}

pub fn assemble_state(h_fused: &Value, idle_per_node: &[usize], coords: &[[f64; 2]]) -> Result<AgentState> {
    if h_fused.shape().len() != 2 {
        return Err(Error::shape("assemble_state", h_fused.shape(), &[]));
    }
    let (n, f) = (h_fused.rows(), h_fused.cols());
    if idle_per_node.len() != n || coords.len() != n {
        return Err(Error::shape("assemble_state", &[n], &[idle_per_node.len(), coords.len()]));
    }
    let mut data = Vec::with_capacity(n * (f + 3));
    for i in 0..n {
        data.extend_from_slice(h_fused.row(i));
        data.push(idle_per_node[i] as f64);
        data.extend_from_slice(&coords[i]);
    }
    Ok(AgentState {
        rows: Value::new(vec![n, f + 3], data)?,
    })
}
