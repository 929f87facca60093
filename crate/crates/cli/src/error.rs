use std::fmt;
use std::path::Path;

/// Failures that stop a command before it produces its artifact. Negative
/// evidence is not an error; commands report it through [`Status::Failed`].
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, malformed config or input files.
    Usage(String),
    /// Missing or unreadable files, write failures.
    Io(String),
}

impl CliError {
    pub fn usage(m: impl fmt::Display) -> Self {
        CliError::Usage(m.to_string())
    }

    pub fn io(path: &Path, m: impl fmt::Display) -> Self {
        CliError::Io(format!("{}: {m}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

/// How a command that ran to completion went.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// The artifact was written but records a domain failure, e.g. an RMSE
    /// above threshold or a contradicted root goal.
    Failed,
}

impl Status {
    pub fn from_pass(pass: bool) -> Self {
        if pass {
            Status::Ok
        } else {
            Status::Failed
        }
    }

    pub fn and(self, other: Status) -> Status {
        if self == Status::Ok && other == Status::Ok {
            Status::Ok
        } else {
            Status::Failed
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("artifacts serialise");
    s.push('\n');
    s
}

/// Writes to `out` if given, else prints to stdout.
pub fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            out!("{text}");
            Ok(())
        }
    }
}
