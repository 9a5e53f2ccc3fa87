//! Command implementations behind the `icdeep` binary.
//!
//! Everything here is a thin orchestration layer over `icdeep-core`:
//! configuration resolution (flags over file over profile defaults),
//! dataset and artifact I/O, the replicate Monte-Carlo harness, and the
//! transformation-grid model selection.

pub mod artifact;
pub mod commands;
pub mod config;
pub mod report;
pub mod study;

/// Maps an error to the process exit code: 2 for input/configuration
/// problems, 3 for numerical failures.
pub fn exit_code(err: &icdeep_core::Error) -> i32 {
    match err {
        icdeep_core::Error::Numerical(_) => 3,
        _ => 2,
    }
}
