use thiserror::Error;

use crate::metric::PointId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("negative distance {value} between {a} and {b}")]
    NegativeDistance { a: PointId, b: PointId, value: f64 },
    #[error("triangle inequality violated: d({a},{c}) > d({a},{b}) + d({b},{c})")]
    TriangleViolation { a: PointId, b: PointId, c: PointId },
    #[error("malformed metric input: {0}")]
    MalformedMetric(String),
    #[error("instance has no terminal pairs")]
    EmptyInstance,
    #[error("all terminal pairs have distance zero")]
    DegenerateInstance,
    #[error("point {0} is out of range")]
    UnknownPoint(PointId),
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("net height {0} is not available in the hierarchy")]
    HeightUnderflow(i64),
    #[error("forest is not a tree")]
    NotATree,
    #[error("tree was not produced by the exact oracle")]
    PreconditionUnverifiable,
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("oracle budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("cell family is not laminar")]
    NotLaminar,
    #[error("weight must be positive")]
    NonPositiveWeight,
    #[error("forest is not portal respecting at cluster {0}")]
    NotPortalRespecting(usize),
    #[error("decomposition has {0} top clusters, expected one")]
    NonUniqueRoot(usize),
    #[error("missing back pointer for an entry of cluster {0}")]
    MissingBackPointer(usize),
    #[error("no finite solution found by the table")]
    Infeasible,
    #[error("io: {0}")]
    Io(String),
    #[error("json: {0}")]
    Json(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
