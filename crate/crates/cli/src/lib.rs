//! Experiment runner for the choicenet library: manifest parsing, sweeps over
//! methods, corruption rates and seeds, results tables, summaries and plots.

pub mod config;
pub mod plot;
pub mod results;
pub mod runner;
pub mod selfcheck;
pub mod summary;

use choicenet::{Error, ErrorCategory};

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e.category() {
        ErrorCategory::Config => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Numeric => 4,
    }
}
