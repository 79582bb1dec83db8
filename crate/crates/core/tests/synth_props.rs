use mvpose::synth::{
    generate_scene, render_detections, FeatureOracle, NoiseConfig, OracleConfig, SceneSpec,
};
use proptest::prelude::*;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb).max(1e-300)
}

/// Nearest identity feature in another view picks the same person.
fn association_accuracy(seed: u64, persons: usize) -> (usize, usize) {
    let scene = generate_scene(seed, persons, &SceneSpec::default())
        .unwrap()
        .with_noise(NoiseConfig::zero());
    let oracle = FeatureOracle::new(&scene, seed, OracleConfig::default()).unwrap();
    let id = oracle.config().identity_channels();
    let dets = render_detections(&scene, seed, false);
    let feats: Vec<Vec<(usize, Vec<f64>)>> = dets
        .iter()
        .enumerate()
        .map(|(v, ds)| {
            ds.iter()
                .map(|d| {
                    let f = oracle.sample_pixel(v, &d.center).values[..id].to_vec();
                    (d.identity.unwrap(), f)
                })
                .collect()
        })
        .collect();
    let (mut ok, mut total) = (0, 0);
    for a in 0..feats.len() {
        for b in 0..feats.len() {
            if a == b {
                continue;
            }
            for (pa, fa) in &feats[a] {
                let best = feats[b]
                    .iter()
                    .max_by(|x, y| cosine(fa, &x.1).total_cmp(&cosine(fa, &y.1)))
                    .unwrap();
                total += 1;
                if best.0 == *pa {
                    ok += 1;
                }
            }
        }
    }
    (ok, total)
}

#[test]
fn nearest_identity_feature_associates_perfectly() {
    let (mut ok, mut total) = (0, 0);
    for seed in 0..100 {
        let (o, t) = association_accuracy(seed, 4);
        ok += o;
        total += t;
    }
    assert_eq!(ok, total, "{ok}/{total}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generation_is_a_pure_function_of_the_seed(seed in 0u64..10_000, n in 1usize..6) {
        let spec = SceneSpec::default();
        let a = generate_scene(seed, n, &spec).unwrap();
        let b = generate_scene(seed, n, &spec).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(render_detections(&a, seed, true), render_detections(&b, seed, true));
    }

    #[test]
    fn generated_scenes_satisfy_invariants(seed in 0u64..10_000, n in 1usize..7) {
        let s = generate_scene(seed, n, &SceneSpec::default()).unwrap();
        prop_assert!(s.validate().is_ok());
        for p in &s.persons {
            prop_assert!(p.validate_lengths(100.0, 600.0).is_ok());
        }
        let c = s.centers();
        for i in 0..c.len() {
            for j in 0..i {
                prop_assert!((c[i] - c[j]).norm() >= 500.0);
            }
        }
    }
}
