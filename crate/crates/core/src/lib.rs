//! Resource-aware spatio-temporal forecasting coupled with
//! preference-conditioned multi-objective dispatch.

pub mod agent;
pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod env;
pub mod error;
pub mod graph_learning;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod rast;
pub mod rollout;
pub mod state;
pub mod trainer;

pub use error::{Error, Result};
pub use numerics::{AdamState, Gradients, Param, Parameterized, Tape, Value};
