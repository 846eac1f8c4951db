use rand::Rng;
use serde::{Deserialize, Serialize};

use super::preference::validate_preference;
use crate::error::{Error, Result};
use crate::numerics::{glorot, zeros, Param, Parameterized, Tape, Value};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
}

/// Per-node perceptron mapping `state_row ‖ ω` to `d` objective values.
/// Hidden layers use ReLU; the output layer is linear.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QNetwork {
    pub layers: Vec<Dense>,
}

impl QNetwork {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, input: usize, hidden: &[usize], outputs: usize) -> Self {
        let mut layers = Vec::new();
        let mut width = input;
        for &h in hidden.iter().chain(std::iter::once(&outputs)) {
            layers.push(Dense {
                weight: glorot(rng, &[width, h], width, h),
                bias: zeros(&[h]),
            });
            width = h;
        }
        QNetwork { layers }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().expect("at least one layer").bias.shape()[0]
    }

    /// Sets every output bias to `value`.
    pub fn set_output_bias(&mut self, value: f64) {
        if let Some(last) = self.layers.last_mut() {
            last.bias.data_mut().iter_mut().for_each(|b| *b = value);
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: &Value) -> Result<Value> {
        if x.shape().len() != 2 || x.cols() != self.input_width() {
            return Err(Error::shape("QNetwork::forward", x.shape(), &[self.input_width()]));
        }
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = tape.param(&layer.weight);
            let b = tape.param(&layer.bias);
            h = tape.matmul(&h, &w)?;
            h = tape.add_bias(&h, &b, 1)?;
            if i < last {
                h = tape.relu(&h)?;
            }
        }
        Ok(h)
    }
}

impl Parameterized for QNetwork {
    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }
}

/// Rows `state[i] ‖ ω` for the listed nodes.
pub fn network_inputs(state: &Value, omega: &[f64], nodes: impl IntoIterator<Item = usize>) -> Vec<f64> {
    let mut out = Vec::new();
    for i in nodes {
        out.extend_from_slice(state.row(i));
        out.extend_from_slice(omega);
    }
    out
}

/// Applies the shared network to every node row of `state: [N × w]`.
pub fn per_node_q(tape: &mut Tape, state: &Value, omega: &[f64], net: &QNetwork) -> Result<Value> {
    validate_preference(omega, net.outputs())?;
    let n = state.rows();
    let x = Value::new(
        vec![n, state.cols() + omega.len()],
        network_inputs(state, omega, 0..n),
    )?;
    net.forward(tape, &x)
}
