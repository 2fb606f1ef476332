//! Process-level error type carrying the exit-code contract: 1 for
//! configuration and usage problems, 2 for data and artifact problems, 3 for
//! failures inside a training run. Every error prints as a single line on
//! standard error so scripts can match on it.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config,
    Data,
    Training,
}

impl Kind {
    fn label(self) -> &'static str {
        match self {
            Kind::Config => "config",
            Kind::Data => "data",
            Kind::Training => "training",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    kind: Kind,
    err: anyhow::Error,
}

impl CliError {
    pub fn config(msg: impl fmt::Display) -> Self {
        CliError {
            kind: Kind::Config,
            err: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        CliError {
            kind: Kind::Data,
            err: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            Kind::Config => 1,
            Kind::Data => 2,
            Kind::Training => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // "{:#}" renders the whole cause chain as "outer: inner"; any
        // stray newlines are flattened to keep stderr at one line
        let chain = format!("{:#}", self.err);
        let mut flat = chain.replace('\n', "; ");
        while flat.contains("  ") {
            flat = flat.replace("  ", " ");
        }
        write!(f, "error: {}: {}", self.kind.label(), flat.trim())
    }
}

/// Tags a fallible result with the exit-code kind its failure belongs to.
pub trait ExitKind<T> {
    fn config_err(self) -> Result<T, CliError>;
    fn data_err(self) -> Result<T, CliError>;
    fn training_err(self) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> ExitKind<T> for Result<T, E> {
    fn config_err(self) -> Result<T, CliError> {
        self.map_err(|e| CliError {
            kind: Kind::Config,
            err: e.into(),
        })
    }

    fn data_err(self) -> Result<T, CliError> {
        self.map_err(|e| CliError {
            kind: Kind::Data,
            err: e.into(),
        })
    }

    fn training_err(self) -> Result<T, CliError> {
        self.map_err(|e| CliError {
            kind: Kind::Training,
            err: e.into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_contract() {
        assert_eq!(CliError::config("x").exit_code(), 1);
        assert_eq!(CliError::data("x").exit_code(), 2);
        let t: Result<(), _> = Err(anyhow::anyhow!("x")).training_err();
        assert_eq!(t.unwrap_err().exit_code(), 3);
    }

    #[test]
    fn display_is_a_single_prefixed_line() {
        let e = CliError::data("first line\nsecond  line");
        let s = e.to_string();
        assert_eq!(s, "error: data: first line; second line");
        assert_eq!(s.lines().count(), 1);
    }

    #[test]
    fn tagged_errors_keep_their_message() {
        let r: Result<(), std::io::Error> = Err(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            "gone missing",
        ));
        let s = r.config_err().unwrap_err().to_string();
        assert!(s.starts_with("error: config: "));
        assert!(s.contains("gone missing"));
    }
}
