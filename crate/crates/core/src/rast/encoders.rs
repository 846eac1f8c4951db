//! Long (stacked DSTCL) and short (single ST-block) history encoders.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dstcl::{dstcl_forward, propagate, DstclParams};
use crate::error::{Error, Result};
use crate::numerics::{glorot, ones, zeros, Param, Parameterized, Tape, Value};

/// Dilations of the default three-layer stack.
pub const LONG_DILATIONS: [usize; 3] = [1, 2, 4];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LongEncoder {
    pub layers: Vec<DstclParams>,
    /// Width-1 projections aligning residual channels; `None` where the
    /// layer keeps its channel count.
    pub skip_proj: Vec<Option<Param>>,
    pub residual: bool,
}

impl LongEncoder {
    /// `c_in → hidden → … → features` with one layer per dilation.
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        c_in: usize,
        hidden: usize,
        features: usize,
        dilations: &[usize],
        temperature: f64,
    ) -> Self {
        let mut layers = Vec::new();
        let mut skip_proj = Vec::new();
        let mut c = c_in;
        for (i, &d) in dilations.iter().enumerate() {
            let out = if i + 1 == dilations.len() { features } else { hidden };
            layers.push(DstclParams::new(rng, c, hidden, out, d, temperature));
            skip_proj.push((c != out).then(|| glorot(rng, &[out, c, 1], c, out)));
            c = out;
        }
        LongEncoder {
            layers,
            skip_proj,
            residual: true,
        }
    }

    pub fn from_layers(layers: Vec<DstclParams>, residual: bool) -> Self {
        let skip_proj = layers.iter().map(|_| None).collect();
        LongEncoder {
            layers,
            skip_proj,
            residual,
        }
    }

    pub fn receptive_field(&self) -> usize {
        1 + self.layers.iter().map(DstclParams::shrink).sum::<usize>()
    }

    pub fn features(&self) -> usize {
        self.layers.last().map_or(0, DstclParams::out_channels)
    }
}

impl Parameterized for LongEncoder {
    fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        for (layer, proj) in self.layers.iter().zip(&self.skip_proj) {
            v.extend(layer.params());
            v.extend(proj.iter());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for (layer, proj) in self.layers.iter_mut().zip(self.skip_proj.iter_mut()) {
            v.extend(layer.params_mut());
            v.extend(proj.iter_mut());
        }
        v
    }
}

fn last_step(tape: &mut Tape, h: &Value) -> Result<Value> {
    let (n, c, l) = (h.shape()[0], h.shape()[1], h.shape()[2]);
    let last = tape.slice(h, 2, l - 1, 1)?;
    tape.reshape(&last, &[n, c])
}

fn keep_last(tape: &mut Tape, h: &Value, len: usize) -> Result<Value> {
    let l = h.shape()[2];
    if l == len {
        return Ok(h.clone());
    }
    tape.slice(h, 2, l - len, len)
}

/// Encodes `x: [N × C × L]` into `[N × F]`. Only the last
/// `receptive_field()` steps can influence the output, so earlier ones are
/// dropped before the stack runs.
pub fn long_encoder(
    tape: &mut Tape,
    x: &Value,
    enc: &LongEncoder,
    adj_norm: &Value,
    gamma: f64,
) -> Result<Value> {
    if x.shape().len() != 3 {
        return Err(Error::shape("long_encoder", x.shape(), &[]));
    }
    let needed = enc.receptive_field();
    let len = x.shape()[2];
    if len < needed {
        return Err(Error::SequenceTooShort { len, needed });
    }
    let mut h = keep_last(tape, x, needed)?;
    for (layer, proj) in enc.layers.iter().zip(&enc.skip_proj) {
        let y = dstcl_forward(tape, &h, layer, adj_norm, gamma)?;
        h = if enc.residual {
            let skip = match proj {
                Some(p) => {
                    let k = tape.param(p);
                    tape.conv1d(&h, &k, 1)?
                }
                None => h.clone(),
            };
            let skip = keep_last(tape, &skip, y.shape()[2])?;
            tape.add(&y, &skip)?
        } else {
            y
        };
    }
    last_step(tape, &h)
}

/// Width-1 lift, one residual temporal/spatial block, layer norm.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShortEncoder {
    pub lift_weight: Param,
    pub lift_bias: Param,
    pub temporal_weight: Param,
    pub temporal_bias: Param,
    pub spatial_weight: Param,
    pub norm_gain: Param,
    pub norm_bias: Param,
    pub window: usize,
}

pub const SHORT_MIN_WINDOW: usize = 8;
const TEMPORAL_WIDTH: usize = 3;

impl ShortEncoder {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, c_in: usize, features: usize, window: usize) -> Self {
        let f = features;
        ShortEncoder {
            lift_weight: glorot(rng, &[f, c_in, 1], c_in, f),
            lift_bias: zeros(&[f]),
            temporal_weight: glorot(rng, &[f, f, TEMPORAL_WIDTH], f * TEMPORAL_WIDTH, f * TEMPORAL_WIDTH),
            temporal_bias: zeros(&[f]),
            spatial_weight: glorot(rng, &[f, f, 1], f, f),
            norm_gain: ones(&[f]),
            norm_bias: zeros(&[f]),
            window,
        }
    }

    pub fn features(&self) -> usize {
        self.lift_weight.shape()[0]
    }
}

impl Parameterized for ShortEncoder {
    fn params(&self) -> Vec<&Param> {
        vec![
            &self.lift_weight,
            &self.lift_bias,
            &self.temporal_weight,
            &self.temporal_bias,
            &self.spatial_weight,
            &self.norm_gain,
            &self.norm_bias,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.lift_weight,
            &mut self.lift_bias,
            &mut self.temporal_weight,
            &mut self.temporal_bias,
            &mut self.spatial_weight,
            &mut self.norm_gain,
            &mut self.norm_bias,
        ]
    }
}

/// Row-normalised `I + 11ᵀ`: each node keeps weight 2/(N+1) on itself and
/// 1/(N+1) on every other node.
pub fn uniform_propagation(n: usize) -> Value {
    let off = 1.0 / (n as f64 + 1.0);
    let mut v = Value::filled(&[n, n], off);
    for i in 0..n {
        v.data_mut()[i * n + i] = 2.0 * off;
    }
    v
}

/// Encodes the last `window` steps of `x: [N × C × L]` into `[N × F]`.
pub fn short_encoder(tape: &mut Tape, x: &Value, enc: &ShortEncoder) -> Result<Value> {
    if x.shape().len() != 3 {
        return Err(Error::shape("short_encoder", x.shape(), &[]));
    }
    let len = x.shape()[2].min(enc.window);
    if len < SHORT_MIN_WINDOW {
        return Err(Error::SequenceTooShort {
            len,
            needed: SHORT_MIN_WINDOW,
        });
    }
    let n = x.shape()[0];
    let x = keep_last(tape, x, len)?;

    let lw = tape.param(&enc.lift_weight);
    let lb = tape.param(&enc.lift_bias);
    let h0 = tape.conv1d(&x, &lw, 1)?;
    let h0 = tape.add_bias(&h0, &lb, 1)?;

    let tw = tape.param(&enc.temporal_weight);
    let tb = tape.param(&enc.temporal_bias);
    let t = tape.conv1d(&h0, &tw, 1)?;
    let t = tape.add_bias(&t, &tb, 1)?;
    let t = tape.relu(&t)?;
    let skip = keep_last(tape, &h0, t.shape()[2])?;
    let h1 = tape.add(&skip, &t)?;

    let sw = tape.param(&enc.spatial_weight);
    let s = propagate(tape, &uniform_propagation(n), &h1)?;
    let s = tape.conv1d(&s, &sw, 1)?;
    let s = tape.relu(&s)?;
    let h2 = tape.add(&h1, &s)?;

    let last = last_step(tape, &h2)?;
    let g = tape.param(&enc.norm_gain);
    let b = tape.param(&enc.norm_bias);
    tape.layer_norm(&last, &g, &b)
}
