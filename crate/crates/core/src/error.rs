use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report.
///
/// Variants are split into the ones callers can fix by changing their inputs
/// ([`Error::is_validation`]) and runtime failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("cycle in hierarchy: {}", .0.join(" -> "))]
    HierarchyCycle(Vec<String>),

    #[error("unknown {kind} `{id}`")]
    Unknown { kind: &'static str, id: String },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("no candidate terms found among {candidates} candidate documents; increase K")]
    EmptyCandidatePool { candidates: usize },

    #[error("transform matrix is rank deficient: rank {rank} of {size} after exhausting the reserve list")]
    RankDeficient { rank: usize, size: usize },

    #[error("transform matrix is singular to working precision (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("non-finite activation in layer {layer}")]
    NonFinite { layer: usize },

    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: usize },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("{0} oracle check(s) failed")]
    CheckFailed(usize),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs rather than runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DuplicateId { .. }
                | Error::Validation(_)
                | Error::HierarchyCycle(_)
                | Error::Unknown { .. }
                | Error::EmptyCorpus
                | Error::LengthMismatch { .. }
        )
    }
}
