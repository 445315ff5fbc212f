use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid search spec: {0}")]
    InvalidSpec(String),

    #[error("map cloud is empty")]
    EmptyMap,

    #[error("scan cloud is empty")]
    EmptyScan,

    #[error("need at least {needed} points, cloud has {available}")]
    InsufficientPoints { needed: usize, available: usize },

    #[error("point and normal counts differ ({points} points, {normals} normals)")]
    NormalCountMismatch { points: usize, normals: usize },

    #[error("map points need normals (point {first_point} has none)")]
    MissingNormals { first_point: usize },

    #[error("no consensus anywhere in the search space")]
    EmptyConsensus,

    #[error("normal matrix is singular (det = {det:e})")]
    Singular { det: f64 },

    #[error("instance too large for the brute-force oracle: {0}")]
    InstanceTooLarge(String),

    #[error("metric is undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("sensor position lies inside scene geometry")]
    SensorInsideGeometry,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
