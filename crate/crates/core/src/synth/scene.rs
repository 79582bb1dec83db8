use std::f64::consts::PI;

use nalgebra::{Rotation3, Unit, Vector3};
use rand::Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};

use super::skeleton::{Skeleton, MAX_BONE_MM, MIN_BONE_MM};
use super::{stream_rng, tags, SynthError};
use crate::Camera;

/// Axis-aligned box in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for Bounds {
    /// 8 m x 8 m floor, 2 m tall, centred on the origin.
    fn default() -> Self {
        Self {
            min: [-4000.0, -4000.0, 0.0],
            max: [4000.0, 4000.0, 2000.0],
        }
    }
}

impl Bounds {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self, SynthError> {
        if (0..3).any(|i| !(max[i] > min[i]) || !min[i].is_finite() || !max[i].is_finite()) {
            return Err(SynthError::InvalidConfig(format!(
                "bounds min {min:?} must be below max {max:?}"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn min_v(&self) -> Vector3<f64> {
        Vector3::from(self.min)
    }

    pub fn max_v(&self) -> Vector3<f64> {
        Vector3::from(self.max)
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min_v() + self.max_v()) * 0.5
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max_v() - self.min_v()
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x * e.y * e.z
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Coordinates mapped to `[0, 1]^3`.
    pub fn normalize(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (p - self.min_v()).component_div(&self.extent())
    }

    /// Box scaled by `factor` about its centre.
    pub fn scaled(&self, factor: f64) -> Self {
        let c = self.center();
        let h = self.extent() * (0.5 * factor);
        Self {
            min: (c - h).into(),
            max: (c + h).into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Maximum 2D jitter (px) applied to centres in training mode.
    pub center_jitter_px: f64,
    /// Isotropic Gaussian 2D noise (px) on every detection, in all modes.
    pub detection_noise_px: f64,
    pub miss_rate: f64,
    /// Expected number of false centres per view.
    pub clutter_rate: f64,
    pub feature_noise_sigma: f64,
    /// Probability that a person is invisible in one view's features.
    pub occlusion_rate: f64,
    pub initial_pose_sigma_mm: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            center_jitter_px: 25.0,
            detection_noise_px: 0.0,
            miss_rate: 0.0,
            clutter_rate: 0.0,
            feature_noise_sigma: 0.0,
            occlusion_rate: 0.0,
            initial_pose_sigma_mm: 30.0,
        }
    }
}

impl NoiseConfig {
    /// Everything off: exact detections and features.
    pub fn zero() -> Self {
        Self {
            center_jitter_px: 0.0,
            initial_pose_sigma_mm: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let rates = [
            ("miss_rate", self.miss_rate),
            ("clutter_rate", self.clutter_rate),
            ("occlusion_rate", self.occlusion_rate),
        ];
        for (name, r) in rates {
            if !(0.0..=1.0).contains(&r) {
                return Err(SynthError::InvalidConfig(format!("{name} {r} not in [0, 1]")));
            }
        }
        let sigmas = [
            ("center_jitter_px", self.center_jitter_px),
            ("detection_noise_px", self.detection_noise_px),
            ("feature_noise_sigma", self.feature_noise_sigma),
            ("initial_pose_sigma_mm", self.initial_pose_sigma_mm),
        ];
        for (name, s) in sigmas {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(SynthError::InvalidConfig(format!("{name} {s} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Ring of cameras looking at a common target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigSpec {
    pub views: usize,
    pub radius_mm: f64,
    pub height_mm: f64,
    pub target_height_mm: f64,
    pub focal_px: f64,
    pub image_size: (u32, u32),
    /// Per-scene random azimuth perturbation of each camera (degrees).
    pub azimuth_jitter_deg: f64,
    pub height_jitter_mm: f64,
}

impl Default for RigSpec {
    fn default() -> Self {
        Self {
            views: 5,
            radius_mm: 6000.0,
            height_mm: 3500.0,
            target_height_mm: 1000.0,
            focal_px: 560.0,
            image_size: (640, 480),
            azimuth_jitter_deg: 8.0,
            height_jitter_mm: 300.0,
        }
    }
}

impl RigSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(3..=10).contains(&self.views) {
            return Err(SynthError::InvalidConfig(format!(
                "camera count {} outside 3..=10",
                self.views
            )));
        }
        if !(self.radius_mm > 0.0 && self.focal_px > 0.0) {
            return Err(SynthError::InvalidConfig("rig radius and focal must be positive".into()));
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(SynthError::InvalidConfig("empty image".into()));
        }
        Ok(())
    }

    pub fn build(&self, seed: u64) -> Result<Vec<Camera>, SynthError> {
        self.validate()?;
        let mut rng = stream_rng(seed, &[tags::RIG]);
        let target = Vector3::new(0.0, 0.0, self.target_height_mm);
        (0..self.views)
            .map(|k| {
                let jitter = rng.random_range(-1.0..=1.0) * self.azimuth_jitter_deg.to_radians();
                let dz = rng.random_range(-1.0..=1.0) * self.height_jitter_mm;
                let az = 2.0 * PI * k as f64 / self.views as f64 + jitter;
                let eye = Vector3::new(
                    self.radius_mm * az.cos(),
                    self.radius_mm * az.sin(),
                    self.height_mm + dz,
                );
                Camera::look_at(eye, target, Vector3::z(), self.focal_px, self.image_size)
                    .map_err(SynthError::from)
            })
            .collect()
    }
}

/// Everything [`generate_scene`] needs besides the seed and person count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub rig: RigSpec,
    pub bounds: Bounds,
    /// Person centres are drawn uniformly from a disc of this radius.
    pub placement_radius_mm: f64,
    pub min_separation_mm: f64,
    pub max_attempts: usize,
    pub noise: NoiseConfig,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            rig: RigSpec::default(),
            bounds: Bounds::default(),
            placement_radius_mm: 2500.0,
            min_separation_mm: 500.0,
            max_attempts: 1000,
            noise: NoiseConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub persons: Vec<Skeleton>,
    pub cameras: Vec<Camera>,
    pub bounds: Bounds,
    pub noise: NoiseConfig,
}

impl Scene {
    pub fn num_views(&self) -> usize {
        self.cameras.len()
    }

    pub fn centers(&self) -> Vec<Vector3<f64>> {
        self.persons.iter().map(Skeleton::center).collect()
    }

    /// Same persons seen by a subset of the cameras, in the given order.
    pub fn with_views(&self, views: &[usize]) -> Result<Self, SynthError> {
        let cameras = views
            .iter()
            .map(|&v| {
                self.cameras.get(v).cloned().ok_or_else(|| {
                    SynthError::InvalidConfig(format!("view {v} out of range"))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            cameras,
            ..self.clone()
        })
    }

    pub fn with_noise(&self, noise: NoiseConfig) -> Self {
        Self {
            noise,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        self.noise.validate()?;
        if !(3..=10).contains(&self.cameras.len()) {
            return Err(SynthError::InvalidConfig(format!(
                "camera count {} outside 3..=10",
                self.cameras.len()
            )));
        }
        for (i, p) in self.persons.iter().enumerate() {
            p.validate_tree()?;
            if let Some(j) = p.joints.iter().find(|j| !self.bounds.contains(j)) {
                return Err(SynthError::InvalidConfig(format!(
                    "person {i} joint {j:?} outside bounds"
                )));
            }
        }
        Ok(())
    }
}

/// Per-bone articulation limit (radians), indexed by child joint.
const JOINT_FREEDOM_DEG: [f64; 15] = [
    12.0, 20.0, 0.0, 0.0, 70.0, 60.0, 0.0, 25.0, 25.0, 0.0, 70.0, 60.0, 0.0, 25.0, 25.0,
];

fn random_pose<R: Rng>(rng: &mut R) -> Skeleton {
    let rest = Skeleton::rest_pose();
    let root = super::CENTER_JOINT;
    let children = rest.children(root);
    let k = rest.num_joints();
    let mut joints = vec![Vector3::zeros(); k];
    let mut acc = vec![Rotation3::identity(); k];
    joints[root] = rest.joints[root];
    let mut stack = vec![root];
    while let Some(p) = stack.pop() {
        for &c in &children[p] {
            let max = JOINT_FREEDOM_DEG[c].to_radians();
            let local = if max > 0.0 {
                let axis: [f64; 3] = UnitSphere.sample(rng);
                let angle = rng.random_range(0.0..=max);
                Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::from(axis)), angle)
            } else {
                Rotation3::identity()
            };
            acc[c] = acc[p] * local;
            joints[c] = joints[p] + acc[c] * (rest.joints[c] - rest.joints[p]);
            stack.push(c);
        }
    }
    let scale = rng.random_range(0.9..=1.1);
    let yaw = Rotation3::from_axis_angle(&Vector3::z_axis(), rng.random_range(0.0..2.0 * PI));
    let mut joints: Vec<_> = joints.iter().map(|j| yaw * (j * scale)).collect();
    let floor = joints.iter().map(|j| j.z).fold(f64::INFINITY, f64::min);
    for j in &mut joints {
        j.z += 60.0 - floor;
    }
    Skeleton {
        joints,
        bones: rest.bones,
    }
}

/// Deterministic scene: random posed persons on the floor plus a camera ring.
pub fn generate_scene(seed: u64, n_persons: usize, spec: &SceneSpec) -> Result<Scene, SynthError> {
    if n_persons == 0 {
        return Err(SynthError::InvalidConfig("n_persons must be >= 1".into()));
    }
    spec.noise.validate()?;
    let cameras = spec.rig.build(seed)?;
    let mut rng = stream_rng(seed, &[tags::PLACEMENT]);
    let mut persons: Vec<Skeleton> = Vec::with_capacity(n_persons);
    let bc = spec.bounds.center();
    for person in 0..n_persons {
        let mut placed = None;
        for _ in 0..spec.max_attempts {
            let pose = random_pose(&mut rng);
            let r = spec.placement_radius_mm * rng.random::<f64>().sqrt();
            let a = rng.random_range(0.0..2.0 * PI);
            let shift = Vector3::new(bc.x + r * a.cos(), bc.y + r * a.sin(), spec.bounds.min[2]);
            let mut body = pose;
            let c0 = body.center();
            for j in &mut body.joints {
                j.x += shift.x - c0.x;
                j.y += shift.y - c0.y;
                j.z += shift.z;
            }
            if !body.joints.iter().all(|j| spec.bounds.contains(j)) {
                continue;
            }
            let c = body.center();
            if persons
                .iter()
                .any(|q| (q.center() - c).norm() < spec.min_separation_mm)
            {
                continue;
            }
            placed = Some(body);
            break;
        }
        match placed {
            Some(body) => persons.push(body),
            None => {
                return Err(SynthError::Placement {
                    person,
                    attempts: spec.max_attempts,
                })
            }
        }
    }
    for p in &persons {
        p.validate_lengths(MIN_BONE_MM, MAX_BONE_MM)?;
    }
    Ok(Scene {
        persons,
        cameras,
        bounds: spec.bounds,
        noise: spec.noise,
    })
}
