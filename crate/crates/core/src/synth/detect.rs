use std::f64::consts::PI;

use nalgebra::Vector2;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{stream_rng, tags, Scene};

/// A 2D person-centre detection in one view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub center: Vector2<f64>,
    pub confidence: f64,
    /// Ground-truth person index; `None` for clutter. Supervision only.
    pub identity: Option<usize>,
}

/// Noisy 2D centres per view. Persons whose centre falls outside the image
/// or behind the camera are not detected.
pub fn render_detections(scene: &Scene, seed: u64, training_mode: bool) -> Vec<Vec<Detection>> {
    let noise = &scene.noise;
    scene
        .cameras
        .iter()
        .enumerate()
        .map(|(v, cam)| {
            let mut rng = stream_rng(seed, &[tags::DETECT, v as u64]);
            let mut out = Vec::new();
            for (p, person) in scene.persons.iter().enumerate() {
                // Draw every variate unconditionally so one person's fate
                // does not shift another's random stream.
                let missed = rng.random::<f64>() < noise.miss_rate;
                let radius = rng.random::<f64>() * noise.center_jitter_px;
                let angle = rng.random_range(0.0..2.0 * PI);
                let gx: f64 = rng.sample(rand_distr::StandardNormal);
                let gy: f64 = rng.sample(rand_distr::StandardNormal);
                let Ok(mut c) = cam.project(&person.center()) else {
                    continue;
                };
                if missed || !cam.in_image(&c) {
                    continue;
                }
                let mut shift = Vector2::new(gx, gy) * noise.detection_noise_px;
                if training_mode {
                    shift += Vector2::new(angle.cos(), angle.sin()) * radius;
                }
                c += shift;
                if !cam.in_image(&c) {
                    continue;
                }
                let conf = (-0.5 * (shift.norm() / 25.0).powi(2)).exp();
                out.push(Detection {
                    center: c,
                    confidence: conf,
                    identity: Some(p),
                });
            }
            if noise.clutter_rate > 0.0 {
                let mut rng = stream_rng(seed, &[tags::CLUTTER, v as u64]);
                let count = Poisson::new(noise.clutter_rate)
                    .map(|d| d.sample(&mut rng) as usize)
                    .unwrap_or(0);
                let (w, h) = cam.image_size();
                let conf = Normal::new(0.5f64, 0.1).expect("valid normal");
                for _ in 0..count {
                    let c = Vector2::new(
                        rng.random_range(0.0..w as f64),
                        rng.random_range(0.0..h as f64),
                    );
                    out.push(Detection {
                        center: c,
                        confidence: conf.sample(&mut rng).clamp(0.05, 0.95),
                        identity: None,
                    });
                }
            }
            out
        })
        .collect()
}
