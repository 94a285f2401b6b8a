//! Command implementations behind the `cluster-ba` binary.
//!
//! Everything the binary does lives here so integration and acceptance tests
//! can drive commands in-process; `main.rs` only parses arguments, configures
//! the thread pool, and maps errors to exit codes.

pub mod commands;
pub mod presets;
pub mod report;

use cluster_ba::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NO_CONVERGENCE: i32 = 2;

/// Exit code for a command error: solver-side failures mean the problem was
/// readable but could not be solved (2); everything else is an input error (1).
pub fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Stalled { .. } | Error::NumericalFailure(_) | Error::Unobservable => {
            EXIT_NO_CONVERGENCE
        }
        _ => EXIT_INPUT,
    }
}

/// Thread cap: the `--threads` flag, else `CLUSTER_BA_THREADS`, else 0
/// (library default).
pub fn resolve_threads(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("CLUSTER_BA_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or(0)
}
