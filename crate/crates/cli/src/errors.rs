//! CLI failure taxonomy mapped onto exit codes: 1 usage, 2 configuration,
//! 3 runtime. Every failure is also emitted as a one-line JSON record so
//! scripts never have to parse prose.

use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad invocation: unknown flags, malformed values, missing arguments.
    #[error("{0}")]
    Usage(String),
    /// The configuration file or an override violates the schema.
    #[error("{0}")]
    Config(String),
    /// The command itself failed while running.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Runtime(_) => "runtime",
        }
    }

    /// The machine-readable record printed to stderr on failure.
    pub fn record(&self) -> String {
        #[derive(Serialize)]
        struct Record<'a> {
            error: Inner<'a>,
        }
        #[derive(Serialize)]
        struct Inner<'a> {
            exit_code: u8,
            kind: &'a str,
            message: String,
        }
        serde_json::to_string(&Record {
            error: Inner {
                exit_code: self.exit_code(),
                kind: self.kind(),
                message: self.to_string(),
            },
        })
        .expect("error record serialization cannot fail")
    }
}

impl From<efcn_core::Error> for CliError {
    fn from(e: efcn_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
