//! Experiment runner for semantic variational Bayes.
//!
//! Reads a JSON experiment config, dispatches to the mixture, rate or control
//! solvers, and writes CSV tables, per-cell JSON and a checksummed manifest.

// `!(x > 0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;

pub mod compare;
pub mod config;
pub mod output;
pub mod plot;
pub mod run;

pub use compare::{compare_runs, CompareReport};
pub use config::ExperimentConfig;
pub use plot::emit_plots;
pub use run::{run_experiment, RunOptions, RunOutcome};

/// Failure class attached to an error as context; selects the process exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    NotConverged,
    Config,
    Io,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        match self {
            Self::NotConverged => 2,
            Self::Config => 3,
            Self::Io => 4,
        }
    }

    /// Exit code for an error: the attached kind, or 1 for anything else.
    pub fn code_of(err: &anyhow::Error) -> i32 {
        err.downcast_ref::<ExitKind>().map_or(1, |k| k.code())
    }
}

impl fmt::Display for ExitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::NotConverged => "not converged",
            Self::Config => "config error",
            Self::Io => "I/O error",
        })
    }
}

/// True when `SVB_DETERMINISTIC=1` forces sequential execution.
pub fn deterministic_env() -> bool {
    std::env::var("SVB_DETERMINISTIC").is_ok_and(|v| v == "1")
}
