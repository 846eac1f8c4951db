//! Dense `f64` arrays, a scoped reverse-mode tape, Adam, and a
//! finite-difference gradient checker.

mod adam;
pub mod gradcheck;
mod tape;
mod value;

use rand::Rng;

pub use adam::AdamState;
pub use gradcheck::{GradCheck, GradReport};
#[cfg(test)]
pub(crate) use tape::sigmoid;
pub use tape::{Binary, Gradients, Tape, Unary};
pub use value::{NodeId, Param, ParamId, Value};

/// A model that owns trainable parameters. Both methods must list the
/// parameters in the same order.
pub trait Parameterized {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.data().len()).sum()
    }

    /// Copies every parameter value from `other`, keeping ids.
    fn assign_from(&mut self, other: &Self) -> crate::Result<()>
    where
        Self: Sized,
    {
        for (dst, src) in self.params_mut().into_iter().zip(other.params()) {
            dst.assign(src)?;
        }
        Ok(())
    }
}

/// Uniform Glorot-style initialisation with bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Param {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, shape, bound)
}

pub fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Param {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Param::new(Value::new(shape.to_vec(), data).expect("shape from caller"))
}

pub fn zeros(shape: &[usize]) -> Param {
    Param::new(Value::zeros(shape))
}

pub fn ones(shape: &[usize]) -> Param {
    Param::new(Value::filled(shape, 1.0))
}
