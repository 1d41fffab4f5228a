//! Library surface of the `engine` binary: parse an input document, run a
//! command, serialize the result.  Kept as a library so integration tests can
//! drive the same path the binary uses.

pub mod commands;
pub mod input;
pub mod output;

use toricgw::EngineError;

pub use commands::CommandFlags;
pub use input::InputDocument;
pub use output::OutputDoc;

#[derive(Debug)]
pub enum CliError {
    /// Malformed JSON or an unknown command/mode.
    Parse(String),
    Engine(EngineError),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Parse(m) => write!(f, "parse error: {m}"),
            CliError::Engine(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        CliError::Engine(e)
    }
}

impl CliError {
    pub fn code(&self) -> String {
        match self {
            CliError::Parse(_) => "parse".into(),
            CliError::Engine(e) => e.code().into(),
        }
    }

    /// 4 for parse errors, 2 for invalid inputs, 3 for domain obstructions.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 4,
            CliError::Engine(EngineError::Parse(_)) => 4,
            CliError::Engine(e) if e.is_validation() => 2,
            CliError::Engine(_) => 3,
        }
    }
}

/// Run a command against the JSON text of an input document.
pub fn run_str(command: &str, text: &str, flags: &CommandFlags) -> Result<OutputDoc, CliError> {
    let doc: InputDocument =
        serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
    commands::run(command, &doc, flags).map_err(|e| match e {
        EngineError::Parse(m) => CliError::Parse(m),
        other => CliError::Engine(other),
    })
}
