//! Exit codes and the error type that carries them.

use std::fmt;

use ksflow::Error as CoreError;

pub const EXIT_OK: i32 = 0;
/// Config or parse error, missing column, too few samples.
pub const EXIT_CONFIG: i32 = 2;
/// Monitor alarm.
pub const EXIT_ALARM: i32 = 3;
/// Numeric failure or corrupted snapshot.
pub const EXIT_NUMERIC: i32 = 4;
/// Violation of an exact property.
pub const EXIT_VIOLATION: i32 = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(EXIT_CONFIG, message)
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self::new(EXIT_NUMERIC, message)
    }

    pub fn io(what: &str, err: std::io::Error) -> Self {
        Self::config(format!("{what}: {err}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let code = match &e {
            CoreError::BoundaryMass { .. } => EXIT_ALARM,
            CoreError::NonFinite { .. }
            | CoreError::Divergence { .. }
            | CoreError::NegativeDensity { .. }
            | CoreError::RankBudget { .. }
            | CoreError::LinearAlgebra(_) => EXIT_NUMERIC,
            CoreError::ShapeMismatch { .. }
            | CoreError::GridMismatch
            | CoreError::InvalidGrid(_)
            | CoreError::InadmissiblePotential(_)
            | CoreError::InvalidParameter(_)
            | CoreError::MissingColumn(_)
            | CoreError::TooFewSamples { .. }
            | CoreError::NonPositiveSample { .. } => EXIT_CONFIG,
        };
        Self::new(code, e.to_string())
    }
}
