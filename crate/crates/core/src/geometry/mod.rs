//! Calibrated pinhole cameras, feature-map sampling, two-view epipolar
//! geometry and linear multi-view triangulation.

mod camera;
mod epipolar;
mod feature;
mod triangulate;

pub use camera::CameraView;
pub use epipolar::{correspondence_score, fundamental_matrix, EpipolarPair, DEFAULT_SCORE_DECAY};
pub use feature::{bilinear_sample, FeatureGrid, FeatureSample, FeatureSource};
pub use triangulate::{triangulate, triangulate_with, DEFAULT_MIN_SINGULAR_RATIO};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("point lies at or behind the camera plane (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("camera centers coincide; epipolar geometry is undefined")]
    DegenerateRig,
    #[error("triangulation needs at least 2 observations, got {0}")]
    InsufficientViews(usize),
    #[error("triangulation is ill-conditioned (singular value ratio {ratio:.3e})")]
    IllConditioned { ratio: f64 },
    #[error("epipolar distance must be non-negative, got {0}")]
    NegativeDistance(f64),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("feature grid shape mismatch: {0}")]
    GridShape(String),
}
