use rand::Rng;
use serde::{Deserialize, Serialize};

use super::inception::{inception_conv, InceptionBank};
use crate::error::{Error, Result};
use crate::numerics::{glorot, zeros, Param, Parameterized, Tape, Value};

/// One gated inception layer followed by graph propagation.
///
/// `filter_bank` feeds the tanh branch and `gate_bank` the sigmoid branch.
/// After gating, each time step is propagated over the graph, mixed by
/// `mix` and mapped by the affine head `head_weight`/`head_bias`. Channel
/// maps are stored as width-1 kernels `[C_out × C_in × 1]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DstclParams {
    pub filter_bank: InceptionBank,
    pub gate_bank: InceptionBank,
    pub mix: Param,
    pub head_weight: Param,
    pub head_bias: Param,
    pub dilation: usize,
}

fn identity_kernel(c: usize) -> Param {
    let mut p = zeros(&[c, c, 1]);
    for i in 0..c {
        p.data_mut()[i * c + i] = 1.0;
    }
    p
}

impl DstclParams {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        c_in: usize,
        hidden: usize,
        c_out: usize,
        dilation: usize,
        temperature: f64,
    ) -> Self {
        DstclParams {
            filter_bank: InceptionBank::new(rng, c_in, hidden, temperature),
            gate_bank: InceptionBank::new(rng, c_in, hidden, temperature),
            mix: glorot(rng, &[hidden, hidden, 1], hidden, hidden),
            head_weight: glorot(rng, &[c_out, hidden, 1], hidden, c_out),
            head_bias: zeros(&[c_out]),
            dilation,
        }
    }

    /// Identity `mix` and head, zero head bias.
    pub fn with_identity_head<R: Rng + ?Sized>(
        rng: &mut R,
        channels: usize,
        dilation: usize,
        temperature: f64,
    ) -> Self {
        DstclParams {
            filter_bank: InceptionBank::new(rng, channels, channels, temperature),
            gate_bank: InceptionBank::new(rng, channels, channels, temperature),
            mix: identity_kernel(channels),
            head_weight: identity_kernel(channels),
            head_bias: zeros(&[channels]),
            dilation,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.filter_bank.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.head_weight.shape()[0]
    }

    /// Steps removed from the time axis by this layer.
    pub fn shrink(&self) -> usize {
        InceptionBank::receptive_field(self.dilation) - 1
    }
}

impl Parameterized for DstclParams {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.filter_bank.params();
        v.extend(self.gate_bank.params());
        v.extend([&self.mix, &self.head_weight, &self.head_bias]);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.filter_bank.params_mut();
        v.extend(self.gate_bank.params_mut());
        v.extend([&mut self.mix, &mut self.head_weight, &mut self.head_bias]);
        v
    }
}

/// Gated activation `tanh(filter) ⊙ σ(gate)`, shape `[N × hidden × L_out]`.
pub fn gated_activation(tape: &mut Tape, x: &Value, params: &DstclParams, gamma: f64) -> Result<Value> {
    let f = inception_conv(tape, x, &params.filter_bank, params.dilation, gamma)?;
    let g = inception_conv(tape, x, &params.gate_bank, params.dilation, gamma)?;
    let f = tape.tanh(&f)?;
    let g = tape.sigmoid(&g)?;
    tape.mul(&f, &g)
}

/// Multiplies every `[N × C]` time slice of `h: [N × C × L]` by `adj` on the left.
pub fn propagate(tape: &mut Tape, adj: &Value, h: &Value) -> Result<Value> {
    let (n, c, l) = (h.shape()[0], h.shape()[1], h.shape()[2]);
    if adj.shape() != [n, n] {
        return Err(Error::shape("graph propagation", adj.shape(), &[n, n]));
    }
    let flat = tape.reshape(h, &[n, c * l])?;
    let mixed = tape.matmul(adj, &flat)?;
    tape.reshape(&mixed, &[n, c, l])
}

pub fn dstcl_forward(
    tape: &mut Tape,
    x: &Value,
    params: &DstclParams,
    adj_norm: &Value,
    gamma: f64,
) -> Result<Value> {
    let n = x.shape().first().copied().unwrap_or(0);
    if adj_norm.shape() != [n, n] {
        return Err(Error::shape("dstcl_forward", adj_norm.shape(), &[n, n]));
    }
    let h_in = gated_activation(tape, x, params, gamma)?;
    let h = propagate(tape, adj_norm, &h_in)?;
    let mix = tape.param(&params.mix);
    let h = tape.conv1d(&h, &mix, 1)?;
    let w = tape.param(&params.head_weight);
    let b = tape.param(&params.head_bias);
    let h = tape.conv1d(&h, &w, 1)?;
    tape.add_bias(&h, &b, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::sigmoid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seeded(seed: u64, shape: &[usize]) -> Value {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Value::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_graph_and_head_is_noop() {
        let p = DstclParams::with_identity_head(&mut ChaCha8Rng::seed_from_u64(1), 2, 1, 2.0);
        let x = seeded(2, &[3, 2, 10]);
        let mut t = Tape::new();
        let out = dstcl_forward(&mut t, &x, &p, &Value::identity(3), 0.4).unwrap();
        let h_in = gated_activation(&mut t, &x, &p, 0.4).unwrap();
        assert_eq!(out.data(), h_in.data());
        assert!(h_in.data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn zero_filter_bank_yields_head_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = DstclParams::new(&mut rng, 2, 3, 4, 1, 2.0);
        p.filter_bank = InceptionBank::zeroed(2, 3, 2.0);
        p.head_bias = Param::new(Value::vector(vec![0.1, -0.2, 0.3, 0.4]));
        let x = seeded(4, &[3, 2, 9]);
        let out = dstcl_forward(&mut Tape::new(), &x, &p, &Value::identity(3), 0.5).unwrap();
        assert_eq!(out.shape(), &[3, 4, 2]);
        for node in 0..3 {
            for c in 0..4 {
                for s in 0..2 {
                    assert_eq!(out.data()[(node * 4 + c) * 2 + s], p.head_bias.data()[c]);
                }
            }
        }
    }

    #[test]
    fn path_graph_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = DstclParams::new(&mut rng, 2, 3, 2, 1, 2.0);
        let x = seeded(6, &[3, 2, 9]);
        // path 0 - 1 - 2 with self loops, row-normalised
        let adj = Value::from_rows(&[
            vec![0.5, 0.5, 0.0],
            vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            vec![0.0, 0.5, 0.5],
        ])
        .unwrap();
        let gamma = 0.3;
        let out = dstcl_forward(&mut Tape::new(), &x, &p, &adj, gamma).unwrap();

        let wts = fusion(gamma);
        let (n, cin, hid, cout, len) = (3, 2, 3, 2, 9);
        let lo = len - 7;
        let xv = |i: usize, c: usize, s: usize| x.data()[(i * cin + c) * len + s];
        let branch = |bank: &InceptionBank, i: usize, o: usize, t: usize| -> f64 {
            let time = t + 7;
            let mut total = 0.0;
            for (b, &w) in super::super::inception::BRANCH_WIDTHS.iter().enumerate() {
                let k = bank.kernels[b].data();
                let mut s = 0.0;
                for c in 0..cin {
                    for j in 0..w {
                        s += k[(o * cin + c) * w + j] * xv(i, c, time - (w - 1 - j));
                    }
                }
                total += wts[b] * s;
            }
            total
        };
        let mut hin = vec![vec![vec![0.0; lo]; hid]; n];
        for i in 0..n {
            for o in 0..hid {
                for t in 0..lo {
                    hin[i][o][t] = branch(&p.filter_bank, i, o, t).tanh() * sigmoid(branch(&p.gate_bank, i, o, t));
                }
            }
        }
        for i in 0..n {
            for t in 0..lo {
                let prop: Vec<f64> = (0..hid)
                    .map(|c| (0..n).map(|j| adj.at(i, j) * hin[j][c][t]).sum())
                    .collect();
                let mixed: Vec<f64> = (0..hid)
                    .map(|o| (0..hid).map(|c| p.mix.data()[o * hid + c] * prop[c]).sum())
                    .collect();
                for o in 0..cout {
                    let y: f64 = (0..hid).map(|c| p.head_weight.data()[o * hid + c] * mixed[c]).sum::<f64>()
                        + p.head_bias.data()[o];
                    assert!((out.data()[(i * cout + o) * lo + t] - y).abs() < 1e-10);
                }
            }
        }
    }

    fn fusion(gamma: f64) -> [f64; 4] {
        super::super::inception::fusion_weights(gamma, 2.0).unwrap()
    }

    #[test]
    fn adjacency_shape_checked() {
        let p = DstclParams::new(&mut ChaCha8Rng::seed_from_u64(1), 1, 2, 2, 1, 2.0);
        let x = Value::zeros(&[3, 1, 8]);
        assert!(dstcl_forward(&mut Tape::new(), &x, &p, &Value::identity(2), 0.5).is_err());
    }
}
