//! Harness error split: configuration problems exit with code 2,
//! anything that fails at run time exits with code 3.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn config(msg: impl Into<String>) -> Self {
        HarnessError::Config(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        HarnessError::Runtime(msg.into())
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Runtime(_) => 3,
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(err: std::io::Error) -> Self {
        HarnessError::Runtime(err.to_string())
    }
}

impl From<dfrl_core::federation::FederationError> for HarnessError {
    fn from(err: dfrl_core::federation::FederationError) -> Self {
        HarnessError::Runtime(err.to_string())
    }
}

impl From<dfrl_core::learner::LearnerError> for HarnessError {
    fn from(err: dfrl_core::learner::LearnerError) -> Self {
        HarnessError::Runtime(err.to_string())
    }
}

impl From<dfrl_transport::NodeError> for HarnessError {
    fn from(err: dfrl_transport::NodeError) -> Self {
        HarnessError::Runtime(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
