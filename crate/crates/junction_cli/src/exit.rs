//! Process exit codes. These are a stable contract.

use std::process::ExitCode;

use mixed_junction::scenario::ScenarioError;
use mixed_junction::sim_engine::SimError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    /// Everything ran and no safety check fired.
    Ok = 0,
    /// A safety violation or a failed suite.
    Violation = 1,
    /// The scenario file (or the command line) could not be parsed.
    Parse = 2,
    /// The input parsed but breaks an invariant, or the sweep grid is empty.
    Invalid = 3,
    /// A simulation aborted.
    Fatal = 4,
    /// Reading or writing files failed.
    Io = 5,
}

impl From<Status> for ExitCode {
    fn from(s: Status) -> Self {
        ExitCode::from(s as u8)
    }
}

/// Configuration problem detected by the CLI itself.
#[derive(Debug)]
pub struct InvalidInput(pub String);

impl std::fmt::Display for InvalidInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InvalidInput {}

fn scenario_status(e: &ScenarioError) -> Status {
    match e {
        ScenarioError::Io(_) => Status::Io,
        e if e.is_parse_error() => Status::Parse,
        _ => Status::Invalid,
    }
}

pub fn classify(err: &anyhow::Error) -> Status {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ScenarioError>() {
            return scenario_status(e);
        }
        if let Some(e) = cause.downcast_ref::<SimError>() {
            return match e {
                SimError::Scenario(s) => scenario_status(s),
                SimError::Fatal { .. } => Status::Fatal,
            };
        }
        if cause.downcast_ref::<InvalidInput>().is_some() {
            return Status::Invalid;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return Status::Io;
        }
    }
    Status::Fatal
}
