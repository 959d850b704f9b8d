//! Failure classes and their process exit codes.

use std::fmt;

/// Exit status for a run whose `--gate` found an anomaly.
pub const EXIT_ANOMALY: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Bad flags, unreadable or invalid configuration.
    Usage,
    /// Unreadable manifests, images, weights, or inputs the models reject.
    Data,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self.kind {
            Kind::Usage => 1,
            Kind::Data => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

/// Tags any error with a failure class.
pub trait Classify<T> {
    fn usage(self) -> CliResult<T>;
    fn data(self) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for std::result::Result<T, E> {
    fn usage(self) -> CliResult<T> {
        self.map_err(|e| Failure { kind: Kind::Usage, error: e.into() })
    }

    fn data(self) -> CliResult<T> {
        self.map_err(|e| Failure { kind: Kind::Data, error: e.into() })
    }
}

pub fn usage_error(msg: impl fmt::Display) -> Failure {
    Failure { kind: Kind::Usage, error: anyhow::anyhow!("{msg}") }
}

pub fn data_error(msg: impl fmt::Display) -> Failure {
    Failure { kind: Kind::Data, error: anyhow::anyhow!("{msg}") }
}
