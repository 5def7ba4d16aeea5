use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid crop: {0}")]
    InvalidCrop(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("degenerate back-projection ray")]
    DegenerateRay,
    #[error("point lies behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("invalid direction: zero-length vector")]
    InvalidDirection,

    #[error("insufficient correspondences: got {got}, need at least {need}")]
    InsufficientCorrespondences { got: usize, need: usize },
    #[error("pose solver did not converge (mean residual {residual_px:.4} px)")]
    NoConvergence { residual_px: f64 },
    #[error("degenerate face geometry: {0}")]
    DegenerateFace(String),
    #[error("incomplete landmarks: missing landmark {0}")]
    IncompleteLandmarks(usize),
    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("{} vertices have non-positive ray distance (first: {:?})", .indices.len(), .indices.first())]
    BehindCameraVertices { indices: Vec<usize> },
    #[error("no valid pose remains after filtering")]
    NoValidPose,
    #[error("degenerate normalization: head x-axis parallel to face direction")]
    DegenerateNormalization,

    #[error("empty mesh, nothing to render")]
    EmptyRender,
    #[error("scene {0} not found in scene pool")]
    SceneNotFound(usize),
    #[error("degenerate mask: landmarks are collinear")]
    DegenerateMask,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("odd image dimensions {0}x{1}, expected even square image")]
    OddDimensions(u32, u32),

    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: schema error: missing or invalid field `{field}`")]
    Schema { line: usize, field: String },
    #[error("missing landmark sidecar {0}")]
    MissingLandmarks(PathBuf),
    #[error("mesh integrity: {0}")]
    MeshIntegrity(String),
    #[error("invalid fixture spec: {0}")]
    InvalidSpec(String),
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }

    /// Errors that abort a whole run rather than a single sample.
    pub fn is_run_level(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
