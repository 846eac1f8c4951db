//! Resource-masked adaptive adjacency.
//!
//! Two embedding tables are projected and squashed into source and target
//! codes `C1`, `C2`. Their antisymmetric product passed through tanh and
//! ReLU yields a directed affinity where at most one of `(i, j)` and
//! `(j, i)` is positive. Only pairs of nodes that both host idle resources
//! keep their edge; the result is then self-looped and row-normalised.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{glorot, Param, Parameterized, Tape, Value};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NodeEmbeddings {
    pub source_embed: Param,
    pub target_embed: Param,
    pub source_proj: Param,
    pub target_proj: Param,
    pub saturation: f64,
}

impl NodeEmbeddings {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, nodes: usize, dim: usize, saturation: f64) -> Self {
        NodeEmbeddings {
            source_embed: glorot(rng, &[nodes, dim], nodes, dim),
            target_embed: glorot(rng, &[nodes, dim], nodes, dim),
            source_proj: glorot(rng, &[dim, dim], dim, dim),
            target_proj: glorot(rng, &[dim, dim], dim, dim),
            saturation,
        }
    }

    pub fn nodes(&self) -> usize {
        self.source_embed.shape()[0]
    }
}

impl Parameterized for NodeEmbeddings {
    fn params(&self) -> Vec<&Param> {
        vec![
            &self.source_embed,
            &self.target_embed,
            &self.source_proj,
            &self.target_proj,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.source_embed,
            &mut self.target_embed,
            &mut self.source_proj,
            &mut self.target_proj,
        ]
    }
}

/// Binary `[N×N]` mask with `M[i][j] = 1` iff both nodes host an idle resource.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResourceMask {
    n: usize,
    bits: Vec<bool>,
}

impl ResourceMask {
    pub fn from_census(idle_per_node: &[usize]) -> Self {
        let n = idle_per_node.len();
        let mut bits = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                bits[i * n + j] = idle_per_node[i] > 0 && idle_per_node[j] > 0;
            }
        }
        ResourceMask { n, bits }
    }

    pub fn from_bits(n: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != n * n {
            return Err(Error::shape("ResourceMask", &[n, n], &[bits.len()]));
        }
        Ok(ResourceMask { n, bits })
    }

    pub fn all(n: usize) -> Self {
        ResourceMask {
            n,
            bits: vec![true; n * n],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn to_value(&self) -> Value {
        let data = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Value::new(vec![self.n, self.n], data).expect("square mask")
    }
}

/// `ReLU(tanh(β(C1 C2ᵀ − C2 C1ᵀ)))` with `C1 = tanh(β Z1 W1)`, `C2 = tanh(β Z2 W2)`.
pub fn compute_affinity(tape: &mut Tape, emb: &NodeEmbeddings) -> Result<Value> {
    let beta = emb.saturation;
    let z1 = tape.param(&emb.source_embed);
    let z2 = tape.param(&emb.target_embed);
    let w1 = tape.param(&emb.source_proj);
    let w2 = tape.param(&emb.target_proj);
    let c1 = tape.matmul(&z1, &w1)?;
    let c1 = tape.scale(&c1, beta)?;
    let c1 = tape.tanh(&c1)?;
    let c2 = tape.matmul(&z2, &w2)?;
    let c2 = tape.scale(&c2, beta)?;
    let c2 = tape.tanh(&c2)?;
    let c2t = tape.transpose(&c2)?;
    let c1t = tape.transpose(&c1)?;
    let forward = tape.matmul(&c1, &c2t)?;
    let backward = tape.matmul(&c2, &c1t)?;
    let diff = tape.sub(&forward, &backward)?;
    let diff = tape.scale(&diff, beta)?;
    let act = tape.tanh(&diff)?;
    tape.relu(&act)
}

pub fn apply_mask(tape: &mut Tape, a_star: &Value, mask: &ResourceMask) -> Result<Value> {
    if a_star.shape() != [mask.n, mask.n] {
        return Err(Error::shape("apply_mask", a_star.shape(), &[mask.n, mask.n]));
    }
    tape.mul(a_star, &mask.to_value())
}

/// `D̃⁻¹(A + I)`.
pub fn normalize_adjacency(tape: &mut Tape, a: &Value) -> Result<Value> {
    if a.shape().len() != 2 || a.rows() != a.cols() {
        return Err(Error::shape("normalize_adjacency", a.shape(), &[]));
    }
    if a.data().iter().any(|&x| x < 0.0) {
        return Err(Error::invalid("adjacency has negative entries"));
    }
    let looped = tape.add(a, &Value::identity(a.rows()))?;
    tape.row_normalize(&looped)
}

/// Affinity, mask and normalisation in one call.
pub fn masked_propagation(
    tape: &mut Tape,
    emb: &NodeEmbeddings,
    mask: &ResourceMask,
) -> Result<Value> {
    let a_star = compute_affinity(tape, emb)?;
    let a = apply_mask(tape, &a_star, mask)?;
    normalize_adjacency(tape, &a)
}
