use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::skeleton::{JOINT_GROUPS, NUM_JOINT_GROUPS};
use super::{mix_seed, splitmix64, stream_rng, tags, Scene, SynthError};
use crate::geometry::{bilinear_sample, FeatureSample, FeatureSource};
use crate::{Camera, Grid};

/// Shape and falloff parameters of the synthetic feature maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub channels: usize,
    /// Image pixels per grid cell.
    pub stride: f64,
    /// Physical radius (mm) of a person's identity footprint around its
    /// projected centre.
    pub identity_scale_mm: f64,
    /// Physical radius (mm) of the 2D centre heat.
    pub center_scale_mm: f64,
    /// Falloff (mm) of the ray-to-centre offset channels.
    pub center_ray_scale_mm: f64,
    /// Falloff (mm) of the ray-to-joint offset channels.
    pub joint_ray_scale_mm: f64,
    /// How strongly a nearer person masks the identity of those behind.
    /// Zero keeps identity additive, so with clean features the nearest
    /// identity vector across views always names the right person.
    pub occlusion_strength: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            stride: 4.0,
            identity_scale_mm: 120.0,
            center_scale_mm: 150.0,
            center_ray_scale_mm: 400.0,
            joint_ray_scale_mm: 80.0,
            occlusion_strength: 0.0,
        }
    }
}

impl OracleConfig {
    pub fn identity_channels(&self) -> usize {
        self.channels / 2
    }

    /// Channel holding the 2D centre heat, used as the centre confidence.
    pub fn center_channel(&self) -> usize {
        self.identity_channels()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.channels < 2 {
            return Err(SynthError::InvalidConfig("oracle needs >= 2 channels".into()));
        }
        if !(self.stride > 0.0) {
            return Err(SynthError::InvalidConfig("stride must be positive".into()));
        }
        Ok(())
    }
}

struct PersonView {
    index: usize,
    center: Vector2<f64>,
    id_var2: f64,
    center_var2: f64,
    /// Joint positions relative to the camera centre.
    rel_joints: Vec<Vector3<f64>>,
    rel_center: Vector3<f64>,
}

struct ViewData {
    k_inv: Matrix3<f64>,
    rot_t: Matrix3<f64>,
    width: usize,
    height: usize,
    /// Visible persons, nearest first.
    persons: Vec<PersonView>,
}

/// Lazily evaluated feature maps for one scene.
///
/// Channel layout: the first `C/2` channels are identity (a per-person unit
/// embedding weighted by proximity to the person's projected centre); then
/// the 2D centre heat; then the offset from the pixel ray to the person
/// centre (3); then ray-to-joint offsets for each joint group (3 each).
/// Channels beyond `C` are dropped.
pub struct FeatureOracle {
    config: OracleConfig,
    noise_sigma: f64,
    noise_seed: u64,
    embeddings: Vec<Vec<f64>>,
    groups: Vec<usize>,
    views: Vec<ViewData>,
}

pub fn grid_dims(image_size: (u32, u32), stride: f64) -> (usize, usize) {
    let f = |n: u32| ((n.saturating_sub(1)) as f64 / stride).ceil() as usize + 1;
    (f(image_size.0), f(image_size.1))
}

impl FeatureOracle {
    pub fn new(scene: &Scene, seed: u64, config: OracleConfig) -> Result<Self, SynthError> {
        config.validate()?;
        let id_dim = config.identity_channels();
        let embeddings = (0..scene.persons.len())
            .map(|p| {
                let mut rng = stream_rng(seed, &[tags::EMBED, p as u64]);
                let v: Vec<f64> = (0..id_dim).map(|_| rng.sample(StandardNormal)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / n).collect()
            })
            .collect();
        let k = scene.persons.first().map_or(0, |p| p.num_joints());
        let groups = (0..k)
            .map(|j| if k == JOINT_GROUPS.len() { JOINT_GROUPS[j] } else { j % NUM_JOINT_GROUPS })
            .collect();
        let views = scene
            .cameras
            .iter()
            .enumerate()
            .map(|(v, cam)| Self::view_data(scene, cam, v, seed, &config))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            config,
            noise_sigma: scene.noise.feature_noise_sigma,
            noise_seed: mix_seed(seed, &[tags::FEATURE_NOISE]),
            embeddings,
            groups,
            views,
        })
    }

    fn view_data(
        scene: &Scene,
        cam: &Camera,
        v: usize,
        seed: u64,
        config: &OracleConfig,
    ) -> Result<ViewData, SynthError> {
        let k_inv = cam
            .intrinsics()
            .try_inverse()
            .ok_or_else(|| SynthError::InvalidConfig("singular intrinsics".into()))?;
        let origin = cam.center();
        let f = cam.focal();
        let mut persons = Vec::new();
        let mut depths = Vec::new();
        for (p, person) in scene.persons.iter().enumerate() {
            let mut rng = stream_rng(seed, &[tags::OCCLUDE, v as u64, p as u64]);
            let occluded = rng.random::<f64>() < scene.noise.occlusion_rate;
            let c3 = person.center();
            let depth = cam.depth(&c3);
            if occluded || depth <= 0.0 {
                continue;
            }
            let center = cam.project(&c3)?;
            let px = |mm: f64| f * mm / depth;
            persons.push(PersonView {
                index: p,
                center,
                id_var2: 2.0 * px(config.identity_scale_mm).powi(2),
                center_var2: 2.0 * px(config.center_scale_mm).powi(2),
                rel_joints: person.joints.iter().map(|j| j - origin).collect(),
                rel_center: c3 - origin,
            });
            depths.push(depth);
        }
        let mut order: Vec<usize> = (0..persons.len()).collect();
        order.sort_by(|&a, &b| depths[a].total_cmp(&depths[b]).then(a.cmp(&b)));
        let mut slots: Vec<Option<PersonView>> = persons.into_iter().map(Some).collect();
        let persons = order.into_iter().map(|i| slots[i].take().unwrap()).collect();
        let (width, height) = grid_dims(cam.image_size(), config.stride);
        Ok(ViewData {
            k_inv,
            rot_t: cam.rotation().transpose(),
            width,
            height,
            persons,
        })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    pub fn grid_size(&self, view: usize) -> (usize, usize) {
        (self.views[view].width, self.views[view].height)
    }

    /// Feature vector of grid cell `(cx, cy)` in `view`, written to `out`.
    pub fn cell(&self, view: usize, cx: usize, cy: usize, out: &mut [f64]) {
        let cfg = &self.config;
        let vd = &self.views[view];
        out.fill(0.0);
        let u = Vector2::new(cx as f64 * cfg.stride, cy as f64 * cfg.stride);
        let ray = (vd.rot_t * (vd.k_inv * Vector3::new(u.x, u.y, 1.0))).normalize();
        let id_dim = cfg.identity_channels();
        let (ident, geo) = out.split_at_mut(id_dim);
        let ray_c2 = 2.0 * cfg.center_ray_scale_mm.powi(2);
        let ray_j2 = 2.0 * cfg.joint_ray_scale_mm.powi(2);
        let mut transmit = 1.0;
        for pv in &vd.persons {
            let d2 = (u - pv.center).norm_squared();
            let raw = (-d2 / pv.id_var2).exp();
            let w = raw * transmit;
            transmit *= 1.0 - cfg.occlusion_strength * raw;
            if w > 0.0 {
                for (o, e) in ident.iter_mut().zip(&self.embeddings[pv.index]) {
                    *o += w * e;
                }
            }
            if geo.is_empty() {
                continue;
            }
            let heat = (-(u - pv.center).norm_squared() / pv.center_var2).exp();
            geo[0] = geo[0].max(heat);
            let off = pv.rel_center - ray * pv.rel_center.dot(&ray);
            let g = (-off.norm_squared() / ray_c2).exp() / cfg.center_ray_scale_mm;
            for a in 0..3 {
                if let Some(o) = geo.get_mut(1 + a) {
                    *o += off[a] * g;
                }
            }
            if geo.len() <= 4 {
                continue;
            }
            for (j, rel) in pv.rel_joints.iter().enumerate() {
                let off = rel - ray * rel.dot(&ray);
                let n2 = off.norm_squared();
                if n2 > 12.0 * ray_j2 {
                    continue;
                }
                let g = (-n2 / ray_j2).exp() / cfg.joint_ray_scale_mm;
                let base = 4 + 3 * self.groups[j];
                for a in 0..3 {
                    if let Some(o) = geo.get_mut(base + a) {
                        *o += off[a] * g;
                    }
                }
            }
        }
        if self.noise_sigma > 0.0 {
            let base = mix_seed(self.noise_seed, &[view as u64, cx as u64, cy as u64]);
            for (c, o) in out.iter_mut().enumerate() {
                *o += self.noise_sigma * hashed_normal(base, c as u64);
            }
        }
    }

    /// Bilinear sample at an image pixel, evaluating only the four cells
    /// involved. Bit-identical to sampling the rendered grid.
    pub fn sample_pixel(&self, view: usize, pixel: &Vector2<f64>) -> FeatureSample<f64> {
        let vd = &self.views[view];
        bilinear_sample(
            vd.width,
            vd.height,
            self.config.channels,
            &(pixel / self.config.stride),
            |x, y, out| self.cell(view, x, y, out),
        )
    }

    pub fn render(&self, view: usize) -> Grid {
        let (w, h) = self.grid_size(view);
        let c = self.config.channels;
        let mut values = vec![0.0; w * h * c];
        for y in 0..h {
            for x in 0..w {
                let start = (y * w + x) * c;
                self.cell(view, x, y, &mut values[start..start + c]);
            }
        }
        Grid::from_values(w, h, c, self.config.stride, values).expect("finite oracle features")
    }

    pub fn render_all(&self) -> Vec<Grid> {
        (0..self.views.len()).map(|v| self.render(v)).collect()
    }
}

impl FeatureSource<f64> for FeatureOracle {
    fn num_views(&self) -> usize {
        self.views.len()
    }

    fn channels(&self) -> usize {
        self.config.channels
    }

    fn sample_view(&self, view: usize, pixel: &Vector2<f64>) -> FeatureSample<f64> {
        self.sample_pixel(view, pixel)
    }
}

fn unit_open(h: u64) -> f64 {
    ((h >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// Box-Muller normal keyed by a hash, so any cell can be generated alone.
fn hashed_normal(base: u64, index: u64) -> f64 {
    let h1 = splitmix64(base ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    let h2 = splitmix64(h1);
    (-2.0 * unit_open(h1).ln()).sqrt() * (2.0 * PI * unit_open(h2)).cos()
}

/// Dense feature grids for every view with the default oracle shape.
pub fn render_features(scene: &Scene, seed: u64) -> Result<Vec<Grid>, SynthError> {
    Ok(FeatureOracle::new(scene, seed, OracleConfig::default())?.render_all())
}
