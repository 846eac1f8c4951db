//! Command-line front end: config parsing, the five commands, and the
//! mapping from failures to exit codes.

use std::fmt;

pub mod commands;
pub mod config;

pub use commands::{evaluate, infer, ingest, simulate, train, Baseline, PolicySource};
pub use config::{Objective, RunConfig};

/// A problem with the user's input rather than a runtime failure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

/// 2 for input and schema errors anywhere in the chain, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use asterlab_core::Error as E;
    for cause in err.chain() {
        if cause.is::<InputError>() || cause.is::<serde_json::Error>() {
            return EXIT_INPUT;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            if matches!(
                e,
                E::Schema { .. } | E::InvalidArgument(_) | E::Json(_) | E::Checkpoint(_)
            ) {
                return EXIT_INPUT;
            }
        }
    }
    EXIT_RUNTIME
}
