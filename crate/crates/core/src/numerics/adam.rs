use serde::{Deserialize, Serialize};

use super::tape::Gradients;
use super::value::Param;
use crate::error::{Error, Result};

/// Adam optimizer state for an ordered list of parameters.
///
/// The list order is fixed at construction; later calls must pass the
/// parameters in the same order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[&Param], learning_rate: f64) -> Self {
        AdamState {
            first_moment: params.iter().map(|p| vec![0.0; p.data().len()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.data().len()]).collect(),
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected Adam update with explicit gradient slices.
    pub fn step(&mut self, params: &mut [&mut Param], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                &[self.first_moment.len()],
                &[params.len(), grads.len()],
            ));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first_moment) {
            if p.data().len() != g.len() || m.len() != g.len() {
                return Err(Error::shape("adam_step", p.shape(), &[g.len()]));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.first_moment[i], &mut self.second_moment[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = grads[i][j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *w -= self.learning_rate * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Update using gradients from a tape; parameters absent from `grads`
    /// are treated as having zero gradient.
    pub fn step_with(&mut self, params: &mut [&mut Param], grads: &Gradients) -> Result<()> {
        let owned: Vec<Vec<f64>> = params
            .iter()
            .map(|p| {
                grads
                    .param(p)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; p.data().len()])
            })
            .collect();
        let slices: Vec<&[f64]> = owned.iter().map(Vec::as_slice).collect();
        self.step(params, &slices)
    }
}
