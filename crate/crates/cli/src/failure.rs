//! Exit-code contract: 0 ok, 2 configuration, 3 training, 4 model/data
//! mismatch, 5 unsupported method for the model.

use std::fmt;

use tsxd_core::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Config,
    Training,
    Mismatch,
    Unsupported,
}

impl Kind {
    pub fn exit_code(self) -> u8 {
        match self {
            Kind::Config => 2,
            Kind::Training => 3,
            Kind::Mismatch => 4,
            Kind::Unsupported => 5,
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Failure {
            kind,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Kind::Config, message)
    }

    pub fn mismatch(message: impl Into<String>) -> Self {
        Self::new(Kind::Mismatch, message)
    }

    /// Errors while reading or preparing input data are configuration
    /// problems regardless of variant.
    pub fn from_data(e: Error) -> Self {
        Self::config(e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let kind = match e {
            Error::Training { .. } => Kind::Training,
            Error::Architecture(_) | Error::Shape { .. } => Kind::Mismatch,
            Error::NoImageBranch => Kind::Unsupported,
            _ => Kind::Config,
        };
        Failure::new(kind, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::config(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::config(e.to_string())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}
