//! Error taxonomy shared by the whole engine.
//!
//! Every failure carries a stable machine code (`code()`) so callers can map
//! errors onto exit statuses without string matching.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    /// Input could not be parsed at all.
    #[error("parse error: {0}")]
    Parse(String),

    /// Structured input parsed but violates a validity requirement.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A constructed object failed one of its own invariants.
    #[error("construction failed: {0}")]
    Construction(String),

    /// Operation applied outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A reciprocal linear factor could not be expanded exactly.
    #[error("singular factor: {0}")]
    SingularFactor(String),

    /// A series map could not be reversed.
    #[error("non-invertible map: {0}")]
    NonInvertible(String),

    /// Leading-order linear system was rank deficient.
    #[error("rank deficiency: {0}")]
    RankDeficiency(String),

    /// Positive-power elimination hit a term outside the derivative span.
    #[error("obstruction: {0}")]
    Obstruction(String),

    /// A required positivity/coarseness condition on twist data failed.
    #[error("convexity violation: {0}")]
    Convexity(String),

    /// Requested enumeration would not terminate.
    #[error("non-terminating enumeration: {0}")]
    NonTerminating(String),
}

impl EngineError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::Parse(_) => "parse",
            EngineError::Invalid(_) => "invalid-input",
            EngineError::Construction(_) => "construction",
            EngineError::Domain(_) => "domain",
            EngineError::SingularFactor(_) => "singular-factor",
            EngineError::NonInvertible(_) => "non-invertible",
            EngineError::RankDeficiency(_) => "rank-deficiency",
            EngineError::Obstruction(_) => "obstruction",
            EngineError::Convexity(_) => "convexity",
            EngineError::NonTerminating(_) => "non-terminating",
        }
    }

    /// True for failures of input validation as opposed to runtime domain issues.
    pub fn is_validation(&self) -> bool {
        matches!(self, EngineError::Invalid(_) | EngineError::Construction(_))
    }
}
