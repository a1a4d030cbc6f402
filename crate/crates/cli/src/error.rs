use std::path::{Path, PathBuf};

use belllab_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, unreadable or malformed inputs, invalid configuration.
    #[error("{0}")]
    Input(String),
    /// A check the program itself guarantees did not hold.
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Input(format!("{}: {err}", path.display()))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Attaches a file and, when the offending key can be found, a line number
/// to errors raised while validating a parsed document.
#[derive(Debug, Clone)]
pub struct Source {
    pub path: PathBuf,
    pub text: String,
}

impl Source {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(Source {
            path: path.to_path_buf(),
            text,
        })
    }

    /// Line (1-based) of the first occurrence of `"key"`.
    pub fn line_of(&self, key: &str) -> Option<usize> {
        let quoted = format!("\"{key}\"");
        self.text.lines().position(|l| l.contains(&quoted)).map(|i| i + 1)
    }

    pub fn at(&self, key: &str, message: impl std::fmt::Display) -> CliError {
        match self.line_of(key) {
            Some(line) => CliError::Input(format!("{}:{line}: {message}", self.path.display())),
            None => CliError::Input(format!("{}: {message}", self.path.display())),
        }
    }

    pub fn json_error(&self, err: serde_json::Error) -> CliError {
        CliError::Input(format!(
            "{}:{}:{}: {err}",
            self.path.display(),
            err.line(),
            err.column()
        ))
    }

    /// `fallback_key` locates errors that do not carry a field name.
    pub fn core_error(&self, err: CoreError, fallback_key: &str) -> CliError {
        match &err {
            CoreError::InvalidParameter { field, reason } => self.at(field, format!("field `{field}`: {reason}")),
            _ => self.at(fallback_key, err),
        }
    }
}

/// Core errors raised by data rather than configuration.
pub fn data_error(context: &str, err: CoreError) -> CliError {
    match err {
        CoreError::InvalidParameter { field, reason } => {
            CliError::Input(format!("{context}: field `{field}`: {reason}"))
        }
        other => CliError::Input(format!("{context}: {other}")),
    }
}
