//! Library half of the `pulmo` binary: each subcommand is an ordinary
//! function so tests can drive it in-process.

pub mod commands;
pub mod experiment;
pub mod settings;

use pulmo_core::error::Error;

/// Process exit codes: 0 success, 2 config error, 3 data error,
/// 4 divergence, 5 missing artifact.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Divergence { .. } | Error::NonFinite { .. } => 4,
        _ => 3,
    }
}

/// A command failure with its process exit code.
#[derive(Debug)]
pub struct CmdError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CmdError {
    fn from(err: Error) -> CmdError {
        CmdError { code: exit_code_for(&err), message: err.to_string() }
    }
}

impl std::fmt::Display for CmdError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

pub type CmdResult<T = ()> = std::result::Result<T, CmdError>;
