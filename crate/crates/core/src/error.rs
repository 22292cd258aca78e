use thiserror::Error;

use crate::training::TrainReport;

pub type Result<T> = std::result::Result<T, QpplError>;

#[derive(Debug, Error)]
pub enum QpplError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("feature column {feature} has no finite value")]
    NonFiniteFeature { feature: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    #[error("inconsistent tensor shapes: {0}")]
    ShapeInconsistency(String),
    #[error("sample set is empty")]
    EmptySampleSet,
    #[error("training diverged after {} epochs (loss rose for 10 consecutive epochs)", .0.epochs_run)]
    DivergenceDetected(Box<TrainReport>),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("class `{0}` has no training samples")]
    MissingClass(String),
    #[error("malformed hierarchy: {0}")]
    MalformedHierarchy(String),
    #[error("score set `{0}` is empty")]
    EmptyClass(&'static str),
    #[error("score is not finite")]
    NonFiniteScore,
    #[error("t-SNE needs at least 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("distance matrix has a non-finite entry at ({0}, {1})")]
    NonFiniteDistance(usize, usize),
    #[error("clustering metric needs at least two clusters")]
    SingleCluster,
    #[error("clusters `{0}` and `{1}` have coincident centroids")]
    CoincidentCentroids(String, String),
    #[error("parse error at row {row}, column {col}: {msg}")]
    ParseError { row: usize, col: usize, msg: String },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("bad IDX magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("file is truncated: {0}")]
    TruncatedFile(String),
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("window {window} is larger than series length {len}")]
    WindowTooLarge { window: usize, len: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl QpplError {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            QpplError::DivergenceDetected(_) | QpplError::NonFiniteDistance(..) | QpplError::CoincidentCentroids(..)
        )
    }
}
