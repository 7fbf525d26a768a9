use thiserror::Error;

/// Reasons a view layout or its matrix collection is rejected.
///
/// Every variant names the offending edge or view so that command-line
/// callers can report it verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayoutError {
    #[error("unknown view `{0}`")]
    UnknownView(String),
    #[error("view `{0}` declared twice")]
    DuplicateView(String),
    #[error("view `{0}` has zero dimension")]
    EmptyView(String),
    #[error("edge {0} connects a view to itself")]
    SelfLoop(String),
    #[error("edge {0} declared twice (one orientation per view pair and layer)")]
    DuplicateEdge(String),
    #[error("no matrix supplied for edge {0}")]
    MissingMatrix(String),
    #[error("more than one matrix supplied for edge {0}")]
    DuplicateMatrix(String),
    #[error("matrix supplied for edge {0}, which is not part of the layout")]
    UndeclaredEdge(String),
    #[error("matrix for edge {edge} has shape {found_rows}x{found_cols}, expected {expected_rows}x{expected_cols}")]
    ShapeMismatch {
        edge: String,
        expected_rows: usize,
        expected_cols: usize,
        found_rows: usize,
        found_cols: usize,
    },
    #[error("disconnected view graph: view `{0}` is not reachable from the others")]
    Disconnected(String),
    #[error("layout has no edges")]
    Empty,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("aspect ratio {0} outside (0, 1]")]
    InvalidAspectRatio(f64),
    #[error("singular value {value} is not above the detection threshold {threshold}")]
    Subcritical { value: f64, threshold: f64 },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("vectors are not orthonormal: {0}")]
    NotOrthonormal(String),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("unknown edge {0}")]
    UnknownEdge(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("malformed matrix file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("linear algebra backend failed: {0}")]
    Backend(String),
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
