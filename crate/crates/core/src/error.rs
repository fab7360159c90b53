use thiserror::Error;

/// Errors raised by the validated constructors and numeric routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("label space needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("class names: {0}")]
    InvalidNames(String),
    #[error("score {index} is negative ({value})")]
    NegativeScore { index: usize, value: f64 },
    #[error("all scores are zero")]
    AllZeroScores,
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("index {index} out of range for {len} classes")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("row {row} sums to {sum}, expected 1")]
    NotRowStochastic { row: usize, sum: f64 },
    #[error("entry ({row}, {col}) = {value} outside [0, 1)")]
    EntryOutOfRange { row: usize, col: usize, value: f64 },
    #[error("matrix is not square: row {row} has {len} entries, expected {expected}")]
    NotSquare {
        row: usize,
        len: usize,
        expected: usize,
    },
    #[error("class {0} has no records")]
    EmptyClass(usize),
    #[error("class {class} has {count} records, need at least {required}")]
    InsufficientSamples {
        class: usize,
        count: usize,
        required: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("mu = {0} outside [0, 1]")]
    MuOutOfRange(f64),
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("gain {gain} makes weight of class {class} non-positive")]
    GainTooLarge { gain: f64, class: usize },
    #[error("beta = {0} outside [0, 1)")]
    BetaOutOfRange(f64),
    #[error("class {0} has a zero sample count")]
    ZeroCount(usize),
    #[error("loss config is missing `{0}`")]
    ConfigMissingField(&'static str),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("non-finite gradient at step {0}")]
    NonFiniteGradient(u64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("feature dimension {dim} too small, geometry needs {required}")]
    DimensionTooSmall { dim: usize, required: usize },
    #[error("decision boundary export needs 2-D features, got {0}")]
    NotTwoDimensional(usize),
    #[error("k = {k} outside [1, {n}]")]
    KOutOfRange { k: usize, n: usize },
    #[error("class {0} has no samples in the evaluation set")]
    EmptyClassInEval(usize),
    #[error("malformed CSV at line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
