use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QmdaError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("non-finite value at row {row}")]
    NonFinite { row: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("zero bandwidth at training point {index}")]
    ZeroBandwidth { index: usize },

    #[error("kernel sum vanished at grid point j={grid_index} (bandwidth {epsilon:e})")]
    VanishingKernelSum { grid_index: i32, epsilon: f64 },

    #[error("zero degree at training point {index}")]
    ZeroDegree { index: usize },

    #[error("rank deficient: singular value {index} is {value:e} (threshold {threshold:e})")]
    RankDeficient {
        index: usize,
        value: f64,
        threshold: f64,
    },

    #[error("eigensolver failure: {0}")]
    Eigensolver(String),

    #[error("state annihilated at lead {lead}: norm {norm:e}")]
    StateAnnihilated { lead: usize, norm: f64 },

    #[error("zero validity: observation has likelihood {value:e} under the current state")]
    ZeroValidity { value: f64 },

    #[error("non-finite state during integration at t={time}")]
    BlowUp { time: f64 },

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training step {step} ({name}) failed: {source}")]
    TrainingStep {
        step: usize,
        name: &'static str,
        #[source]
        source: Box<QmdaError>,
    },
}

impl QmdaError {
    /// Stable machine-readable name of the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            QmdaError::Io { .. } => "io",
            QmdaError::Malformed(_) => "malformed",
            QmdaError::NonFinite { .. } => "non_finite",
            QmdaError::DimensionMismatch(_) => "dimension_mismatch",
            QmdaError::Empty(_) => "empty",
            QmdaError::InsufficientData(_) => "insufficient_data",
            QmdaError::InvalidParameter(_) => "invalid_parameter",
            QmdaError::ZeroBandwidth { .. } => "zero_bandwidth",
            QmdaError::VanishingKernelSum { .. } => "vanishing_kernel_sum",
            QmdaError::ZeroDegree { .. } => "zero_degree",
            QmdaError::RankDeficient { .. } => "rank_deficient",
            QmdaError::Eigensolver(_) => "eigensolver",
            QmdaError::StateAnnihilated { .. } => "state_annihilated",
            QmdaError::ZeroValidity { .. } => "zero_validity",
            QmdaError::BlowUp { .. } => "blow_up",
            QmdaError::Artifact(_) => "artifact",
            QmdaError::Config(_) => "config",
            QmdaError::TrainingStep { source, .. } => source.kind(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        QmdaError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, QmdaError>;
