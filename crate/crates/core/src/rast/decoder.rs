use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{glorot, zeros, Param, Parameterized, Tape, Value};

/// Two-layer perceptron emitting `k_max` future intensities per node.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Decoder {
    pub hidden_weight: Param,
    pub hidden_bias: Param,
    pub out_weight: Param,
    pub out_bias: Param,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, features: usize, hidden: usize, k_max: usize) -> Self {
        Decoder {
            hidden_weight: glorot(rng, &[features, hidden], features, hidden),
            hidden_bias: zeros(&[hidden]),
            out_weight: glorot(rng, &[hidden, k_max], hidden, k_max),
            out_bias: zeros(&[k_max]),
        }
    }

    pub fn k_max(&self) -> usize {
        self.out_weight.shape()[1]
    }
}

impl Parameterized for Decoder {
    fn params(&self) -> Vec<&Param> {
        vec![&self.hidden_weight, &self.hidden_bias, &self.out_weight, &self.out_bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.hidden_weight,
            &mut self.hidden_bias,
            &mut self.out_weight,
            &mut self.out_bias,
        ]
    }
}

/// Decoded intensities `[N × k_max]` plus the horizon that marks which
/// columns count.
#[derive(Clone, Debug)]
pub struct Forecast {
    pub values: Value,
    pub horizon: usize,
}

impl Forecast {
    pub fn k_max(&self) -> usize {
        self.values.cols()
    }

    /// `true` for horizon steps excluded from the loss.
    pub fn masked(&self) -> Vec<bool> {
        (0..self.k_max()).map(|j| j >= self.horizon).collect()
    }

    pub fn masked_steps_per_node(&self) -> usize {
        self.k_max() - self.horizon
    }
}

pub fn decoder_forecast(tape: &mut Tape, h: &Value, k: usize, dec: &Decoder) -> Result<Forecast> {
    let k_max = dec.k_max();
    if k == 0 || k > k_max {
        return Err(Error::invalid(format!("horizon {k} outside [1, {k_max}]")));
    }
    let w1 = tape.param(&dec.hidden_weight);
    let b1 = tape.param(&dec.hidden_bias);
    let w2 = tape.param(&dec.out_weight);
    let b2 = tape.param(&dec.out_bias);
    let z = tape.matmul(h, &w1)?;
    let z = tape.add_bias(&z, &b1, 1)?;
    let z = tape.relu(&z)?;
    let y = tape.matmul(&z, &w2)?;
    let values = tape.add_bias(&y, &b2, 1)?;
    Ok(Forecast { values, horizon: k })
}
