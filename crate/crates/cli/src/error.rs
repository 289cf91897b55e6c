use std::path::Path;

use serde::Serialize;

#[derive(Debug)]
pub enum CliError {
    /// A checked property failed; artifacts and manifest are still written.
    Assertion(Vec<String>),
    Config(String),
    Core(balance_core::Error),
    Io(String),
}

#[derive(Serialize)]
struct Report<'a> {
    error: &'a str,
    exit_code: u8,
    message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    failures: Vec<String>,
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Assertion(_) => "assertion",
            CliError::Config(_) => "parse",
            CliError::Core(balance_core::Error::Parse(_)) => "parse",
            CliError::Core(balance_core::Error::Domain(_)) => "domain",
            CliError::Core(balance_core::Error::Capacity(_)) => "capacity",
            CliError::Core(balance_core::Error::Numerical { .. }) => "numerical",
            CliError::Io(_) => "io",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind() {
            "assertion" => 1,
            "parse" => 2,
            "domain" => 3,
            "capacity" => 4,
            "io" => 5,
            _ => 6,
        }
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        let (message, failures) = match self {
            CliError::Assertion(f) => (format!("{} check(s) failed", f.len()), f.clone()),
            CliError::Config(m) | CliError::Io(m) => (m.clone(), Vec::new()),
            CliError::Core(e) => (e.to_string(), Vec::new()),
        };
        let report = Report { error: self.kind(), exit_code: self.exit_code(), message, failures };
        serde_json::to_string(&report).expect("plain strings serialize")
    }
}

impl From<balance_core::Error> for CliError {
    fn from(e: balance_core::Error) -> Self {
        CliError::Core(e)
    }
}
