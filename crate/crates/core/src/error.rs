use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("targets are coincident")]
    CoincidentTargets,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("point coincides with the projection center")]
    ProjectionCenter,
    #[error("degenerate projection")]
    DegenerateProjection,
    #[error("point is at the camera origin")]
    AtCameraOrigin,
    #[error("no free space in scene")]
    NoFreeSpace,
    #[error("endpoint lies in blocked space")]
    BlockedEndpoint,
    #[error("no path between endpoints")]
    Unreachable,
    #[error("sketch search exhausted its open list")]
    SketchFailure,
    #[error("unknown drone id {0}")]
    UnknownDrone(usize),
    #[error("drone {0} has hard conflicts and cannot become master")]
    MasterHasHardConflicts(usize),
    #[error("roadmap cache is stale (scene hash mismatch)")]
    StaleCache,
    #[error("unsupported cache version {0}")]
    CacheVersion(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
