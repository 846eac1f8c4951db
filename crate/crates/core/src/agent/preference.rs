use rand::Rng;

use crate::error::{Error, Result};

/// Signs applied to `[accuracy, false alarm, distance, time]` before
/// scalarisation: costs count against a choice.
pub const SIGN_MASK: [f64; 4] = [1.0, -1.0, -1.0, 1.0];

const SIMPLEX_TOL: f64 = 1e-6;

/// Uniform draw from the `(d−1)`-simplex via sorted-uniform spacings.
pub fn sample_preference<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    let mut cuts: Vec<f64> = (0..d.saturating_sub(1)).map(|_| rng.random::<f64>()).collect();
    cuts.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(d);
    let mut prev = 0.0;
    for c in cuts {
        out.push(c - prev);
        prev = c;
    }
    out.push(1.0 - prev);
    out
}

pub fn validate_preference(omega: &[f64], d: usize) -> Result<()> {
    if omega.len() != d {
        return Err(Error::shape("preference", &[omega.len()], &[d]));
    }
    let sum: f64 = omega.iter().sum();
    if omega.iter().any(|&w| w < -SIMPLEX_TOL || !w.is_finite()) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::invalid(format!("preference {omega:?} is not on the simplex")));
    }
    Ok(())
}

pub fn uniform_preference(d: usize) -> Vec<f64> {
    vec![1.0 / d as f64; d]
}

pub fn one_hot(d: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[k] = 1.0;
    v
}

/// `ω · (sign ⊙ q)`.
pub fn scalarize(q: &[f64], omega: &[f64], sign: &[f64]) -> f64 {
    q.iter().zip(omega).zip(sign).map(|((q, w), s)| q * w * s).sum()
}

/// `max(0.01, exp(−5·step/total))`.
pub fn epsilon_schedule(step: u64, total_steps: u64) -> f64 {
    let ratio = if total_steps == 0 { 0.0 } else { step as f64 / total_steps as f64 };
    (-5.0 * ratio).exp().max(0.01)
}

pub const LAMBDA_MAX: f64 = 0.6;

/// Linear ramp from 0 at epoch 0 to 0.6 at `final_epoch`.
pub fn lambda_schedule(epoch: usize, final_epoch: usize) -> f64 {
    if final_epoch == 0 {
        return 0.0;
    }
    LAMBDA_MAX * (epoch.min(final_epoch) as f64 / final_epoch as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferredPreference {
    pub omega: Vec<f64>,
    /// Sign-masked cumulative reward per objective.
    pub totals: Vec<f64>,
    /// All totals were zero, so the choice is the tie-break default.
    pub degenerate: bool,
}

/// One-hot at the objective with the largest sign-masked cumulative
/// reward; ties go to the lowest index.
pub fn infer_preference(rewards: &[Vec<f64>], sign: &[f64]) -> Result<InferredPreference> {
    let first = rewards.first().ok_or_else(|| Error::invalid("empty trajectory"))?;
    let d = first.len();
    let mut totals = vec![0.0; d];
    for r in rewards {
        if r.len() != d {
            return Err(Error::shape("infer_preference", &[d], &[r.len()]));
        }
        for k in 0..d {
            totals[k] += sign[k] * r[k];
        }
    }
    let mut best = 0;
    for k in 1..d {
        if totals[k] > totals[best] {
            best = k;
        }
    }
    let degenerate = totals.iter().all(|&t| t == 0.0);
    if degenerate {
        log::warn!("all cumulative rewards are zero; returning the tie-break preference");
    }
    Ok(InferredPreference {
        omega: one_hot(d, best),
        totals,
        degenerate,
    })
}
