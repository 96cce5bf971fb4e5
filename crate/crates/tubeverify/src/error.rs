use serde::Serialize;
use tubeverify_core::{BoundsError, Error};

use crate::weights::WeightsError;

/// Failure of a command, classified by exit code.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    /// Malformed arguments, configs or input files. Exit code 2.
    #[error("{0}")]
    Usage(String),
    /// No certificate exists for the request. Exit code 3.
    #[error("{0}")]
    Infeasible(String),
    /// A computation failed or did not converge. Exit code 4.
    #[error("{0}")]
    Numerical(String),
}

#[derive(Serialize)]
struct ErrorJson<'a> {
    error: &'a str,
    message: String,
    exit_code: i32,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Infeasible(_) => "infeasible",
            CliError::Numerical(_) => "numerical",
        }
    }

    /// One-line machine-readable form for stderr.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&ErrorJson { error: self.kind(), message: self.to_string(), exit_code: self.exit_code() })
            .expect("error JSON serializes")
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Bounds(b) => b.into(),
            Error::IterationCap { .. } => CliError::Infeasible(msg),
            Error::NonFiniteState { .. }
            | Error::AcceptanceStarvation { .. }
            | Error::Divergence { .. } => CliError::Numerical(msg),
            Error::InvalidParameter(_)
            | Error::InvalidSpec(_)
            | Error::DimensionMismatch { .. }
            | Error::NotControlAffine
            | Error::LengthMismatch { .. }
            | Error::Shape(_) => CliError::Usage(msg),
        }
    }
}

impl From<BoundsError> for CliError {
    fn from(e: BoundsError) -> Self {
        let msg = e.to_string();
        match e {
            BoundsError::InvalidParameter(_) => CliError::Usage(msg),
            BoundsError::Infeasible { .. } | BoundsError::SampleCountOverflow => CliError::Infeasible(msg),
            BoundsError::EquivalenceViolation { .. } | BoundsError::NoConvergence { .. } => CliError::Numerical(msg),
        }
    }
}

impl From<WeightsError> for CliError {
    fn from(e: WeightsError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(format!("i/o error: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Usage(format!("csv error: {e}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::from(Error::InvalidSpec("x")).exit_code(), 2);
        assert_eq!(CliError::from(Error::Bounds(BoundsError::Infeasible { n: 3 })).exit_code(), 3);
        assert_eq!(CliError::from(Error::Divergence { epoch: 2 }).exit_code(), 4);
        let j: serde_json::Value = serde_json::from_str(&CliError::usage("bad").to_json()).unwrap();
        assert_eq!(j["exit_code"], 2);
        assert_eq!(j["error"], "usage");
    }
}
