//! Synthetic multi-camera scenes and the feature oracle standing in for a
//! pretrained 2D backbone.

mod detect;
mod io;
mod oracle;
mod pose;
mod scene;
mod skeleton;

pub use detect::{render_detections, Detection};
pub use io::{SceneFile, SCENE_SCHEMA_VERSION};
pub use oracle::{render_features, FeatureOracle, OracleConfig};
pub use pose::{initial_pose, initial_pose_triangulated};
pub use oracle::grid_dims;
pub use scene::{generate_scene, Bounds, NoiseConfig, RigSpec, Scene, SceneSpec};
pub use skeleton::{
    Skeleton, CENTER_JOINT, DEFAULT_BONES, JOINT_GROUPS, JOINT_NAMES, MAX_BONE_MM, MIN_BONE_MM,
    NUM_JOINT_GROUPS,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::GeometryError;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("could not place person {person} after {attempts} attempts")]
    Placement { person: usize, attempts: usize },
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("person index {index} out of range ({count} persons)")]
    PersonIndex { index: usize, count: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("scene file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash a seed together with a path of stream identifiers.
pub fn mix_seed(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Independent RNG stream for `(seed, parts...)`.
pub fn stream_rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, parts))
}

pub(crate) mod tags {
    pub const PLACEMENT: u64 = 1;
    pub const RIG: u64 = 2;
    pub const DETECT: u64 = 3;
    pub const CLUTTER: u64 = 4;
    pub const EMBED: u64 = 5;
    pub const OCCLUDE: u64 = 6;
    pub const FEATURE_NOISE: u64 = 7;
    pub const INIT_POSE: u64 = 8;
    pub const INIT_TRI: u64 = 9;
}
