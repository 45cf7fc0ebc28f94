use thiserror::Error;

/// Errors produced by the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("plane depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("camera intrinsics are singular")]
    SingularIntrinsics,
    #[error("homography is degenerate (determinant {0:e})")]
    DegenerateHomography(f64),
    #[error("plane count mismatch: expected {expected}, found {found}")]
    PlaneCountMismatch { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid depth range: near {near} must be positive and less than far {far}")]
    InvalidDepthRange { near: f64, far: f64 },
    #[error("at least one plane is required")]
    ZeroPlanes,
    #[error("at least one view is required")]
    NoViews,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("weight shape mismatch: {0}")]
    WeightShape(String),
    #[error("unsupported file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// True for failures caused by numerics (non-finite values, degenerate
    /// geometry discovered during computation) rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::DegenerateHomography(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
