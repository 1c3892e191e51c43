use std::fmt;
use std::path::PathBuf;

use grid5g_core::Error as CoreError;

/// One problem in an input file, with the offending line when known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
    pub line: Option<usize>,
    pub snippet: Option<String>,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}: {}", self.field, self.message)?,
            None => write!(f, "{}: {}", self.field, self.message)?,
        }
        if let (Some(line), Some(snippet)) = (self.line, &self.snippet) {
            write!(f, "\n  {line:>4} | {snippet}")?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}", render_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Runtime(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("peer closed the session after {completed} TTIs")]
    PeerClosed { completed: u64 },
}

fn render_diagnostics(diags: &[Diagnostic]) -> String {
    let mut out = format!("{} problem(s):", diags.len());
    for d in diags {
        out.push_str("\n- ");
        out.push_str(&d.to_string());
    }
    out
}

impl CliError {
    /// 2 for invalid input, 3 for runtime failures, 4 for protocol violations.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) | CliError::Usage(_) => 2,
            CliError::Io { .. } | CliError::Runtime(_) | CliError::PeerClosed { .. } => 3,
            CliError::Protocol(_) => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Validation(v) => CliError::Invalid(
                v.into_iter()
                    .map(|v| Diagnostic {
                        field: v.field,
                        message: v.message,
                        line: None,
                        snippet: None,
                    })
                    .collect(),
            ),
            CoreError::Config(m) | CoreError::Input(m) => CliError::Usage(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
