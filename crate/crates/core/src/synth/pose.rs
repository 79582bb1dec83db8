use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{stream_rng, tags, Scene, SynthError};
use crate::geometry::triangulate;

fn person<'a>(scene: &'a Scene, index: usize) -> Result<&'a super::Skeleton, SynthError> {
    scene.persons.get(index).ok_or(SynthError::PersonIndex {
        index,
        count: scene.persons.len(),
    })
}

/// Ground-truth joints plus i.i.d. Gaussian noise of
/// `scene.noise.initial_pose_sigma_mm` on every coordinate.
pub fn initial_pose(scene: &Scene, index: usize, seed: u64) -> Result<Vec<Vector3<f64>>, SynthError> {
    let body = person(scene, index)?;
    let sigma = scene.noise.initial_pose_sigma_mm;
    let mut rng = stream_rng(seed, &[tags::INIT_POSE, index as u64]);
    Ok(body
        .joints
        .iter()
        .map(|j| {
            let n = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            j + n * sigma
        })
        .collect())
}

/// Per-joint triangulation of projected joints perturbed by isotropic
/// Gaussian pixel noise. Views where a joint is behind the camera or
/// outside the image are skipped.
pub fn initial_pose_triangulated(
    scene: &Scene,
    index: usize,
    seed: u64,
    pixel_noise: f64,
) -> Result<Vec<Vector3<f64>>, SynthError> {
    let body = person(scene, index)?;
    let mut rng = stream_rng(seed, &[tags::INIT_TRI, index as u64]);
    body.joints
        .iter()
        .map(|j| {
            let mut obs = Vec::with_capacity(scene.cameras.len());
            for cam in &scene.cameras {
                let noise = Vector2::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                ) * pixel_noise;
                if let Ok(px) = cam.project(j) {
                    if cam.in_image(&px) {
                        obs.push((cam, px + noise));
                    }
                }
            }
            triangulate(&obs).map_err(SynthError::from)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, NoiseConfig, SceneSpec};

    fn scene(sigma: f64) -> Scene {
        generate_scene(12, 2, &SceneSpec::default())
            .unwrap()
            .with_noise(NoiseConfig {
                initial_pose_sigma_mm: sigma,
                ..NoiseConfig::zero()
            })
    }

    #[test]
    fn zero_sigma_is_ground_truth() {
        let s = scene(0.0);
        assert_eq!(initial_pose(&s, 1, 3).unwrap(), s.persons[1].joints);
    }

    #[test]
    fn mean_joint_error_follows_chi_distribution() {
        let s = scene(20.0);
        let (mut total, mut n) = (0.0, 0usize);
        for seed in 0..700 {
            let pose = initial_pose(&s, 0, seed).unwrap();
            for (p, g) in pose.iter().zip(&s.persons[0].joints) {
                total += (p - g).norm();
                n += 1;
            }
        }
        assert!(n >= 10_000);
        // Mean of a chi distribution with 3 degrees of freedom.
        let expected = 20.0 * 2.0 * (2.0 / std::f64::consts::PI).sqrt();
        let mean = total / n as f64;
        assert!((mean - expected).abs() < 0.1 * expected, "{mean} vs {expected}");
    }

    #[test]
    fn noiseless_triangulation_recovers_joints() {
        let s = scene(0.0);
        let pose = initial_pose_triangulated(&s, 0, 1, 0.0).unwrap();
        for (p, g) in pose.iter().zip(&s.persons[0].joints) {
            assert!((p - g).norm() < 1e-6);
        }
    }

    #[test]
    fn bad_person_index_is_reported() {
        let s = scene(0.0);
        assert!(matches!(
            initial_pose(&s, 5, 0),
            Err(SynthError::PersonIndex { index: 5, count: 2 })
        ));
    }
}
