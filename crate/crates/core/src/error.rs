use crate::geometry::GeometryError;
use crate::nn::NnError;
use crate::synth::SynthError;

/// Errors raised by the pipeline stages (matching, centre refinement, pose
/// regression, evaluation).
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("need at least 2 views, got {0}")]
    InsufficientViews(usize),
    #[error("point {0:?} lies outside the scene bounds")]
    OutOfBounds([f64; 3]),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    pub fn is_divergence(&self) -> bool {
        matches!(self, PipelineError::Nn(NnError::TrainingDiverged(_)))
    }
}
