use std::fmt;

/// Failures grouped by process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit 2: unreadable, malformed or inconsistent configuration.
    Config(String),
    /// Exit 3: integration or linear algebra failed.
    Numeric(String),
    /// Exit 4: the solver hit its iteration cap.
    NotConverged(String),
    /// Exit 1: writing outputs failed.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::NotConverged(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::NotConverged(m) => write!(f, "solver did not converge: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<privmap::Error> for CliError {
    fn from(e: privmap::Error) -> Self {
        if e.is_input_error() {
            CliError::Config(e.to_string())
        } else if matches!(e, privmap::Error::Io(_)) {
            CliError::Io(e.to_string())
        } else {
            CliError::Numeric(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_errors_map_to_exit_codes() {
        let input: CliError = privmap::Error::InvalidArgument("x".into()).into();
        assert_eq!(input.exit_code(), 2);
        let numeric: CliError = privmap::Error::NotPositiveDefinite {
            field: "lifted covariance",
            min_eigenvalue: -1.0,
        }
        .into();
        assert_eq!(numeric.exit_code(), 3);
        let io: CliError = privmap::Error::Io(std::io::Error::other("disk")).into();
        assert_eq!(io.exit_code(), 1);
        let nested: CliError = privmap::Error::Window {
            k: 3,
            source: Box::new(privmap::Error::Quantizer("bad".into())),
        }
        .into();
        assert_eq!(nested.exit_code(), 2);
    }
}
