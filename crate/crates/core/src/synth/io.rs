use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{Bounds, NoiseConfig, Scene, Skeleton, SynthError};
use crate::Camera;

pub const SCENE_SCHEMA_VERSION: u32 = 1;
const SCENE_KIND: &str = "mvpose-scene";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    /// Row-major 3x3.
    pub intrinsics: [[f64; 3]; 3],
    /// Row-major 3x3 world-to-camera rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub image_size: [u32; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonRecord {
    pub joints: Vec<[f64; 3]>,
    pub bones: Vec<[usize; 2]>,
}

/// On-disk scene document (JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub schema_version: u32,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub bounds: Bounds,
    pub noise: NoiseConfig,
    pub cameras: Vec<CameraRecord>,
    pub persons: Vec<PersonRecord>,
}

fn rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
}

fn matrix(r: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| r[i][j])
}

impl SceneFile {
    pub fn from_scene(scene: &Scene, seed: Option<u64>) -> Self {
        Self {
            schema_version: SCENE_SCHEMA_VERSION,
            kind: SCENE_KIND.into(),
            seed,
            bounds: scene.bounds,
            noise: scene.noise,
            cameras: scene
                .cameras
                .iter()
                .map(|c| CameraRecord {
                    intrinsics: rows(c.intrinsics()),
                    rotation: rows(c.rotation()),
                    translation: (*c.translation()).into(),
                    image_size: [c.image_size().0, c.image_size().1],
                })
                .collect(),
            persons: scene
                .persons
                .iter()
                .map(|p| PersonRecord {
                    joints: p.joints.iter().map(|j| (*j).into()).collect(),
                    bones: p.bones.iter().map(|&(a, b)| [a, b]).collect(),
                })
                .collect(),
        }
    }

    pub fn to_scene(&self) -> Result<Scene, SynthError> {
        if self.schema_version != SCENE_SCHEMA_VERSION || self.kind != SCENE_KIND {
            return Err(SynthError::Format(format!(
                "unsupported scene document {} v{}",
                self.kind, self.schema_version
            )));
        }
        let cameras = self
            .cameras
            .iter()
            .map(|c| {
                Camera::new(
                    matrix(&c.intrinsics),
                    matrix(&c.rotation),
                    Vector3::from(c.translation),
                    (c.image_size[0], c.image_size[1]),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let persons = self
            .persons
            .iter()
            .map(|p| {
                Skeleton::new(
                    p.joints.iter().map(|&j| Vector3::from(j)).collect(),
                    p.bones.iter().map(|b| (b[0], b[1])).collect(),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let scene = Scene {
            persons,
            cameras,
            bounds: self.bounds,
            noise: self.noise,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn save(&self, path: &Path) -> Result<(), SynthError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| SynthError::Format(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| SynthError::Format(e.to_string()))
    }
}
