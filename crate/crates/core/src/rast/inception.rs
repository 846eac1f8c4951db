use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{glorot, zeros, Param, Parameterized, Tape, Value};

/// Temporal widths of the four parallel branches.
pub const BRANCH_WIDTHS: [usize; 4] = [2, 4, 6, 8];

/// Four causal convolution kernels of widths [`BRANCH_WIDTHS`], each
/// `[C_out × C_in × w]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InceptionBank {
    pub kernels: Vec<Param>,
    pub temperature: f64,
}

impl InceptionBank {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, c_in: usize, c_out: usize, temperature: f64) -> Self {
        let kernels = BRANCH_WIDTHS
            .iter()
            .map(|&w| glorot(rng, &[c_out, c_in, w], c_in * w, c_out * w))
            .collect();
        InceptionBank {
            kernels,
            temperature,
        }
    }

    pub fn zeroed(c_in: usize, c_out: usize, temperature: f64) -> Self {
        InceptionBank {
            kernels: BRANCH_WIDTHS.iter().map(|&w| zeros(&[c_out, c_in, w])).collect(),
            temperature,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.kernels[0].shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernels[0].shape()[0]
    }

    /// Input length consumed by the widest branch at `dilation`.
    pub fn receptive_field(dilation: usize) -> usize {
        (BRANCH_WIDTHS[3] - 1) * dilation + 1
    }
}

impl Parameterized for InceptionBank {
    fn params(&self) -> Vec<&Param> {
        self.kernels.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.kernels.iter_mut().collect()
    }
}

/// `softmax_j(γ · w_j / τ)` over the branch widths.
pub fn fusion_weights(gamma: f64, temperature: f64) -> Result<[f64; 4]> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("fusion ratio {gamma} outside [0, 1]")));
    }
    if temperature <= 0.0 {
        return Err(Error::invalid("fusion temperature must be positive"));
    }
    let logits = BRANCH_WIDTHS.map(|w| gamma * w as f64 / temperature);
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.map(|l| (l - m).exp());
    let z: f64 = e.iter().sum();
    Ok(e.map(|v| v / z))
}

/// Runs all four branches, front-truncates to the shortest output and
/// returns their fusion-weighted sum.
pub fn inception_conv(
    tape: &mut Tape,
    x: &Value,
    bank: &InceptionBank,
    dilation: usize,
    gamma: f64,
) -> Result<Value> {
    let weights = fusion_weights(gamma, bank.temperature)?;
    if x.shape().len() != 3 {
        return Err(Error::shape("inception_conv", x.shape(), &[]));
    }
    let len = x.shape()[2];
    let needed = InceptionBank::receptive_field(dilation);
    if len < needed {
        return Err(Error::SequenceTooShort { len, needed });
    }
    let shortest = len + 1 - needed;
    let mut acc: Option<Value> = None;
    for (kernel, weight) in bank.kernels.iter().zip(weights) {
        let k = tape.param(kernel);
        let y = tape.conv1d(x, &k, dilation)?;
        let branch_len = y.shape()[2];
        let y = tape.slice(&y, 2, branch_len - shortest, shortest)?;
        let y = tape.scale(&y, weight)?;
        acc = Some(match acc {
            None => y,
            Some(a) => tape.add(&a, &y)?,
        });
    }
    Ok(acc.expect("four branches"))
}
