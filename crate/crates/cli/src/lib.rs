//! Command-line front end: argument handling, run configuration, manifests
//! and the subcommands.

pub mod args;
pub mod commands;
pub mod config;
pub mod manifest;

use std::fmt;

pub use config::RunConfig;

/// Bad flags, config keys or values. Exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

/// Missing or malformed input data. Exit code 2.
#[derive(Debug)]
pub struct DataError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}
impl std::error::Error for DataError {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Maps an error chain to a process exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use netscope::Error as E;
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<DataError>() || cause.is::<std::io::Error>() {
            return EXIT_DATA;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Numeric(_) | E::NonFinite(_) => EXIT_NUMERIC,
                E::Data(_)
                | E::Image { .. }
                | E::UnsupportedMaxval(_)
                | E::Io { .. }
                | E::BadMagic(_)
                | E::Version { .. }
                | E::Truncated(_)
                | E::Checkpoint(_)
                | E::Json(_)
                | E::ZeroVariance(_)
                | E::EmptyPatch => EXIT_DATA,
                _ => EXIT_USAGE,
            };
        }
    }
    EXIT_USAGE
}
