use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("streamline needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),
    #[error("zero arc length")]
    ZeroArcLength,
    #[error("point count mismatch: {0} vs {1}")]
    PointCountMismatch(usize, usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("not a TCK file")]
    NotTck,
    #[error("unexpected EOF")]
    UnexpectedEof,
    #[error("malformed TCK header: {0}")]
    BadHeader(String),
    #[error("unknown datatype {0:?}")]
    UnknownDatatype(String),
    #[error("streamline {0} has fewer than 2 points")]
    ShortStreamline(usize),
    #[error("value not representable: {0}")]
    NotRepresentable(f64),
    #[error("empty tractogram")]
    EmptyTractogram,
    #[error("duplicate class name {0:?}")]
    DuplicateClass(String),
    #[error("cluster tree lacks the {0} mm level")]
    MissingLevel(f64),
    #[error("point ({0}, {1}, {2}) lies outside the voxel grid")]
    OutsideGrid(f64, f64, f64),
    #[error("voxel grid mismatch")]
    GridMismatch,
    #[error("undefined reference: empty reference mask with nonempty prediction")]
    UndefinedReference,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
