//! Batch front-end: JSON configs in, report directories out.

pub mod config;
pub mod output;
pub mod study;

pub use config::{load_config, parse_config, ConfigError, ConfigErrors, Overrides, ProblemConfig, Resolved};
pub use study::{run_study, Check, Outcome, Study, Summary};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const RUNTIME: i32 = 3;
    pub const CHECK_FAILED: i32 = 4;
}

/// Exit code for a library error.
pub fn exit_code(e: &smallnoise::Error) -> i32 {
    use smallnoise::Error;
    match e {
        Error::Config(_) | Error::Input(_) | Error::Parse(_) => exit::CONFIG,
        _ => exit::RUNTIME,
    }
}
