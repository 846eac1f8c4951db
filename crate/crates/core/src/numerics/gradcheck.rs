//! Central finite-difference gradient checking.
//!
//! Analytic gradients from the tape are compared against
//! `(f(x + h) - f(x - h)) / 2h` on a sample of coordinates. A coordinate
//! where the analytic value disagrees with the central estimate but agrees
//! with one of the one-sided estimates sits on a ReLU kink; it is counted
//! and skipped rather than reported as an error.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::Tape;
use super::value::{Param, Value};
use super::Parameterized;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates sampled per tensor; `None` checks all of them.
    pub samples_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-4,
            tolerance: 1e-4,
            samples_per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
    /// (tensor, coordinate, analytic, numeric) of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

impl GradCheck {
    fn coords(&self, rng: &mut ChaCha8Rng, len: usize) -> Vec<usize> {
        match self.samples_per_tensor {
            Some(k) if k < len => {
                let mut v = sample(rng, len, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        }
    }

    fn compare(
        &self,
        report: &mut GradReport,
        tensor: usize,
        coord: usize,
        analytic: f64,
        eval: &mut dyn FnMut(f64) -> Result<f64>,
    ) -> Result<()> {
        let h = self.step;
        let plus = eval(h)?;
        let minus = eval(-h)?;
        let central = (plus - minus) / (2.0 * h);
        let err = relative_error(analytic, central);
        if err >= self.tolerance {
            let base = eval(0.0)?;
            let fwd = (plus - base) / h;
            let bwd = (base - minus) / h;
            let one_sided_tol = self.tolerance.max(10.0 * h);
            if relative_error(analytic, fwd) < one_sided_tol
                || relative_error(analytic, bwd) < one_sided_tol
            {
                if relative_error(fwd, bwd) > one_sided_tol {
                    report.skipped_kinks += 1;
                    return Ok(());
                }
            }
        }
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((tensor, coord, analytic, central));
        }
        Ok(())
    }

    /// Checks d f / d inputs for a function of plain values.
    pub fn inputs<F>(&self, inputs: &[Value], f: F) -> Result<GradReport>
    where
        F: Fn(&mut Tape, &[Value]) -> Result<Value>,
    {
        let mut tape = Tape::recording();
        let leaves: Vec<Value> = inputs.iter().map(|v| tape.leaf(v)).collect();
        let loss = f(&mut tape, &leaves)?;
        let grads = tape.backward(&loss)?;
        let analytic: Vec<Vec<f64>> = leaves
            .iter()
            .map(|l| {
                grads
                    .wrt(l)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; l.len()])
            })
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut report = GradReport::default();
        let mut work: Vec<Value> = inputs.iter().map(Value::detach).collect();
        for t in 0..inputs.len() {
            for c in self.coords(&mut rng, inputs[t].len()) {
                let orig = inputs[t].data()[c];
                let mut eval = |delta: f64| -> Result<f64> {
                    work[t].data_mut()[c] = orig + delta;
                    let mut idle = Tape::new();
                    let out = f(&mut idle, &work).map(|v| v.item());
                    work[t].data_mut()[c] = orig;
                    out
                };
                self.compare(&mut report, t, c, analytic[t][c], &mut eval)?;
            }
        }
        Ok(report)
    }

    /// Checks d f / d parameters of a model.
    pub fn params<M, F>(&self, model: &mut M, f: F) -> Result<GradReport>
    where
        M: Parameterized,
        F: Fn(&mut Tape, &M) -> Result<Value>,
    {
        let mut tape = Tape::recording();
        let loss = f(&mut tape, model)?;
        let grads = tape.backward(&loss)?;
        let analytic: Vec<Vec<f64>> = model
            .params()
            .iter()
            .map(|p| {
                grads
                    .param(p)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; p.data().len()])
            })
            .collect();
        let lens: Vec<usize> = model.params().iter().map(|p| p.data().len()).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut report = GradReport::default();
        for (t, &len) in lens.iter().enumerate() {
            for c in self.coords(&mut rng, len) {
                let orig = model.params()[t].data()[c];
                let mut eval = |delta: f64| -> Result<f64> {
                    set_coord(model, t, c, orig + delta);
                    let mut idle = Tape::new();
                    let out = f(&mut idle, model).map(|v| v.item());
                    set_coord(model, t, c, orig);
                    out
                };
                self.compare(&mut report, t, c, analytic[t][c], &mut eval)?;
            }
        }
        Ok(report)
    }
}

fn set_coord<M: Parameterized>(model: &mut M, tensor: usize, coord: usize, x: f64) {
    let mut ps: Vec<&mut Param> = model.params_mut();
    ps[tensor].data_mut()[coord] = x;
}
