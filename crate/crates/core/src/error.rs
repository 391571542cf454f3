use thiserror::Error;

use crate::Cycle;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    // input / ingest
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed input at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing column `{column}`")]
    MissingColumn { column: String },
    #[error("missing metadata field `{field}` (no sidecar value and no override)")]
    MissingMetadata { field: String },
    #[error("cycle indices must be strictly increasing (row {row})")]
    NonMonotonicCycles { row: usize },
    #[error("capacity must be finite and positive (row {row})")]
    NonPositiveCapacity { row: usize },
    #[error("series too short: need at least {needed} points, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("nominal capacity must be positive")]
    NonPositiveNominal,
    #[error("threshold must lie strictly between 0 and 1, got {0}")]
    InvalidThreshold(f64),

    // smoothing / curvature
    #[error("window must be odd, got {window}")]
    EvenWindow { window: usize },
    #[error("window {window} is below the minimum of {min}")]
    WindowTooSmall { window: usize, min: usize },
    #[error("window {window} exceeds series length {len}")]
    WindowTooLarge { window: usize, len: usize },
    #[error("polynomial order {order} must be below window {window}")]
    OrderTooHigh { order: usize, window: usize },
    #[error("series of length {got} is too short, need at least {needed}")]
    SeriesTooShort { needed: usize, got: usize },

    // matrix profile / segmentation
    #[error("subsequence length {window} cannot be z-normalized (need at least 2)")]
    DegenerateWindow { window: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("only {placed} of {requested} boundaries fit outside the exclusion zones")]
    InsufficientUnmaskedRegion { placed: usize, requested: usize },

    // optimisation
    #[error("residuals are not finite at the initial parameters")]
    NonFiniteResidual,
    #[error("no convergence after {iterations} iterations")]
    MaxIterationsReached { iterations: usize },
    #[error("normal equations are singular")]
    SingularNormalEquations,
    #[error("fit diverged: {reason}")]
    FitDiverged { reason: String },

    // synthetic generation
    #[error("invalid synthetic spec: {reason}")]
    InvalidSpec { reason: String },
    #[error("spec has no knee (b = 0 or c = 0); ground truth is undefined")]
    DegenerateSpec,

    // early prediction
    #[error("cycle {cycle} not present in cycle records")]
    MissingCycle { cycle: Cycle },
    #[error("voltage ranges of cycles {early} and {late} do not overlap")]
    NoVoltageOverlap { early: Cycle, late: Cycle },
    #[error("invalid record for cycle {cycle}: {reason}")]
    InvalidCycleRecord { cycle: Cycle, reason: String },
    #[error("cycle budget {budget} is below the minimum of 11")]
    BudgetTooSmall { budget: Cycle },
    #[error("training set needs at least 2 samples")]
    EmptyTrainingSet,
    #[error("feature ({row}, {col}) is not finite")]
    NonFiniteFeature { row: usize, col: usize },
    #[error("expected {expected} features, got {got}")]
    FeatureCountMismatch { expected: usize, got: usize },
    #[error("true value at index {index} is zero; MAPE undefined")]
    ZeroTrueValue { index: usize },

    // statistics
    #[error("correlation undefined for constant input")]
    ConstantInput,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },
    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            message: err.to_string(),
        }
    }

    pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "Io",
            Error::Parse { .. } => "Parse",
            Error::MissingColumn { .. } => "MissingColumn",
            Error::MissingMetadata { .. } => "MissingMetadata",
            Error::NonMonotonicCycles { .. } => "NonMonotonicCycles",
            Error::NonPositiveCapacity { .. } => "NonPositiveCapacity",
            Error::TooShort { .. } => "TooShort",
            Error::NonPositiveNominal => "NonPositiveNominal",
            Error::InvalidThreshold(_) => "InvalidThreshold",
            Error::EvenWindow { .. } => "EvenWindow",
            Error::WindowTooSmall { .. } => "WindowTooSmall",
            Error::WindowTooLarge { .. } => "WindowTooLarge",
            Error::OrderTooHigh { .. } => "OrderTooHigh",
            Error::SeriesTooShort { .. } => "SeriesTooShort",
            Error::DegenerateWindow { .. } => "DegenerateWindow",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::InsufficientUnmaskedRegion { .. } => "InsufficientUnmaskedRegion",
            Error::NonFiniteResidual => "NonFiniteResidual",
            Error::MaxIterationsReached { .. } => "MaxIterationsReached",
            Error::SingularNormalEquations => "SingularNormalEquations",
            Error::FitDiverged { .. } => "FitDiverged",
            Error::InvalidSpec { .. } => "InvalidSpec",
            Error::DegenerateSpec => "DegenerateSpec",
            Error::MissingCycle { .. } => "MissingCycle",
            Error::NoVoltageOverlap { .. } => "NoVoltageOverlap",
            Error::InvalidCycleRecord { .. } => "InvalidCycleRecord",
            Error::BudgetTooSmall { .. } => "BudgetTooSmall",
            Error::EmptyTrainingSet => "EmptyTrainingSet",
            Error::NonFiniteFeature { .. } => "NonFiniteFeature",
            Error::FeatureCountMismatch { .. } => "FeatureCountMismatch",
            Error::ZeroTrueValue { .. } => "ZeroTrueValue",
            Error::ConstantInput => "ConstantInput",
            Error::InvalidParameter { .. } => "InvalidParameter",
            Error::Serialization(_) => "Serialization",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
