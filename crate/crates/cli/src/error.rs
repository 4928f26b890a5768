use std::path::{Path, PathBuf};

use latticeopt::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Failure classes, each with its own process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invariant check failed: {0}")]
    Invariant(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Numerical(_) => 4,
            CliError::Invariant(_) => 5,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(source) => CliError::Io { path: PathBuf::new(), source },
            Error::Constraint(m) => CliError::Invariant(m),
            e if e.is_numerical() => CliError::Numerical(e.to_string()),
            Error::Pairing(_) => CliError::Numerical(e.to_string()),
            e => CliError::Config(e.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => CliError::Io { path: PathBuf::new(), source },
            kind => CliError::Config(format!("malformed CSV: {kind:?}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::from(Error::invalid("x")).exit_code(), 2);
        assert_eq!(CliError::from(Error::Io(std::io::Error::other("x"))).exit_code(), 3);
        assert_eq!(CliError::from(Error::Singular("x".into())).exit_code(), 4);
        assert_eq!(CliError::from(Error::NonFinite("x".into())).exit_code(), 4);
        assert_eq!(CliError::from(Error::Constraint("x".into())).exit_code(), 5);
    }
}
