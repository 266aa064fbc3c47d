//! Parameter-space-noise exploration that switches between isotropic and
//! directional noise, with a return-weighted covariance update, a 2-D
//! optimization benchmark, and a small deterministic-policy-gradient
//! trainer with self-contained physics environments.

pub mod envs;
pub mod mvn;
pub mod nets;
pub mod noise;
pub mod rlcore;
pub mod toybench;

pub use mvn::{cholesky, default_jitter, sample_mvn, CovMatrix, LowerTriangular, RngState};
pub use noise::{EpisodeRecord, ExplorationLog, NoiseDistribution, NoiseHyper};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric at ({row},{col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("matrix is not positive semidefinite (all jitter escalations failed)")]
    NotPsd,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty return list")]
    EmptyReturns,
    #[error("non-finite return value {value}")]
    NonFiniteReturn { value: f64 },
    #[error("empty state batch")]
    EmptyBatch,
    #[error("policy architectures do not match")]
    ArchitectureMismatch,
    #[error("replay buffer holds {have} transitions, need {need}")]
    BufferTooSmall { have: usize, need: usize },
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("unknown environment `{0}`")]
    EnvNotFound(String),
    #[error("non-finite action component {value}")]
    NonFiniteAction { value: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

/// Canonical float formatting for emitted CSVs: 9 significant digits,
/// scientific notation.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.8e}")
}
