use std::fmt;

use thiserror::Error;

/// Synthesis pipeline stages, named in failure diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    ExtendedSystem,
    PlantStability,
    OutputInjection,
    MaxInvariant,
    ConditionI,
    Francis,
    Friend,
    Certification,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::ExtendedSystem => "extended_system",
            Stage::PlantStability => "plant_stability",
            Stage::OutputInjection => "output_injection",
            Stage::MaxInvariant => "max_invariant",
            Stage::ConditionI => "condition_i",
            Stage::Francis => "francis",
            Stage::Friend => "friend",
            Stage::Certification => "certification",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: String,
        found: String,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("switching signal: {0}")]
    Signal(String),

    #[error("step {t} is outside the switching signal range 0..={last}")]
    OutOfRange { t: usize, last: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("LMI infeasible ({problem}): best constraint violation {best_violation:.3e} after {iterations} iterations")]
    Infeasible {
        problem: String,
        best_violation: f64,
        iterations: usize,
    },

    #[error("certificate rejected: {0}")]
    Rejected(String),

    #[error("linear system unsolvable ({what}): residual {residual:.3e} exceeds {tol:.1e}")]
    Unsolvable {
        what: String,
        residual: f64,
        tol: f64,
    },

    #[error("stage {stage} failed: {reason}")]
    Stage { stage: Stage, reason: String },
}

impl Error {
    pub(crate) fn mismatch(
        context: impl Into<String>,
        expected: impl fmt::Display,
        found: impl fmt::Display,
    ) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn at(stage: Stage, err: Error) -> Self {
        match err {
            e @ Error::Stage { .. } => e,
            e if e.is_input_error() => e,
            other => Error::Stage {
                stage,
                reason: other.to_string(),
            },
        }
    }

    /// True for malformed input (files, grammar, shapes); false for
    /// mathematical failures such as infeasibility or rejected certificates.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::DimensionMismatch { .. }
                | Error::Parse(_)
                | Error::Signal(_)
                | Error::OutOfRange { .. }
                | Error::Io { .. }
        )
    }

    /// Process exit code: 2 for input errors, 1 for mathematical failures.
    pub fn exit_code(&self) -> i32 {
        if self.is_input_error() {
            2
        } else {
            1
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
