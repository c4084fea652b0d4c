use std::fmt;

use eprsim_core::CoreError;

/// One configuration problem, with the offending key path and, when it
/// can be located, the line in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub path: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{} (line {line}): {}", self.path, self.message),
            None => write!(f, "{}: {}", self.path, self.message),
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    /// Configuration rejected; carries every problem found, not just
    /// the first.
    Config(Vec<ConfigIssue>),
    Core(CoreError),
    Io(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(issues) => {
                writeln!(f, "configuration rejected ({} problem(s)):", issues.len())?;
                for issue in issues {
                    writeln!(f, "  - {issue}")?;
                }
                Ok(())
            }
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    pub fn single(path: impl Into<String>, line: Option<usize>, message: impl Into<String>) -> Self {
        CliError::Config(vec![ConfigIssue {
            path: path.into(),
            line,
            message: message.into(),
        }])
    }

    /// Process exit code: 1 configuration, 2 runtime/contract,
    /// 3 insufficient data.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Core(e) => match e {
                CoreError::Config(_) => 1,
                CoreError::Contract(_)
                | CoreError::TrialAborted { .. }
                | CoreError::ClockUnderflow { .. } => 2,
                CoreError::InsufficientData(_)
                | CoreError::DegenerateInput(_)
                | CoreError::Empty(_) => 3,
            },
            CliError::Io(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
