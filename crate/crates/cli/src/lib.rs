//! Command-line pipeline: simulate a dataset, fit a model, predict test
//! units and score the predictions.

pub mod commands;
pub mod config;

use gpcox_core::Error;

/// Process exit code for a pipeline error: 2 configuration, 3 data, 4 numerical.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::Data { .. } | Error::Contract { .. } | Error::Io { .. } => 3,
        Error::Numerical { .. } => 4,
    }
}
