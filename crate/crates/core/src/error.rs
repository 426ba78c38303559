use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Machine-readable reason for rejecting an operation on a [`crate::TrialState`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateCode {
    /// The trial is no longer active.
    TrialStopped,
    /// The trial is still active where a finished trial is required.
    TrialActive,
    /// A cohort was submitted for a dose other than the assigned one.
    DoseMismatch,
    /// A cohort's size differs from the promised cohort size.
    CohortSizeMismatch,
    /// A cohort arrived while a decision is still outstanding, or vice versa.
    OutOfOrder,
    /// Accepting the cohort would exceed the maximum sample size.
    CapacityExceeded,
    /// The serialized document is internally inconsistent.
    InconsistentState,
    /// Unsupported `schema_version`.
    SchemaVersion,
}

impl StateCode {
    pub fn as_str(self) -> &'static str {
        match self {
            StateCode::TrialStopped => "trial_stopped",
            StateCode::TrialActive => "trial_active",
            StateCode::DoseMismatch => "dose_mismatch",
            StateCode::CohortSizeMismatch => "cohort_size_mismatch",
            StateCode::OutOfOrder => "out_of_order",
            StateCode::CapacityExceeded => "capacity_exceeded",
            StateCode::InconsistentState => "inconsistent_state",
            StateCode::SchemaVersion => "schema_version",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("state violation ({}): {message}", code.as_str())]
    State { code: StateCode, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn state(code: StateCode, msg: impl Into<String>) -> Self {
        Error::State {
            code,
            message: msg.into(),
        }
    }

    /// Stable short code, used by the HTTP service.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Config(_) => "configuration",
            Error::State { code, .. } => code.as_str(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
