//! Graph-based multi-view multi-person 3D pose estimation.
//!
//! The pipeline is top-down: a learned cross-view matching graph associates
//! 2D person centres and triangulates coarse 3D centres ([`mmg`]), a
//! point-query graph refines each centre inside a shrinking search ball
//! ([`crg`]), and a multi-view pose graph regresses per-joint offsets on top
//! of an initial 3D pose ([`prg`]). A synthetic scene generator with a
//! feature oracle ([`synth`]) supplies training and evaluation data, and
//! [`eval`] scores whole runs.

mod error;
pub mod config;
pub mod crg;
pub mod eval;
pub mod geometry;
pub mod mmg;
pub mod nn;
pub mod prg;
pub mod scalar;
pub mod synth;
pub mod train;

pub use config::PipelineConfig;
pub use error::PipelineError;

pub use scalar::Scalar;

pub type Camera = geometry::CameraView<f64>;
pub type Grid = geometry::FeatureGrid<f64>;
pub type Epipolar = geometry::EpipolarPair<f64>;
pub type CameraF32 = geometry::CameraView<f32>;
pub type GridF32 = geometry::FeatureGrid<f32>;
pub type Model = nn::GnnModel<f64>;
pub type ModelF32 = nn::GnnModel<f32>;
