//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

use mvpose::nn::{loss, GnnModel, Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Relative errors are measured against `max(|analytic|, |numeric|, FLOOR)`.
pub const REL_FLOOR: f64 = 1e-7;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Scalar probe loss `sum_k <w_k, y_k>` over all model outputs.
fn probe_loss(model: &GnnModel<f64>, graph: &Graph<f64>, weights: &[Tensor<f64>]) -> f64 {
    let outs = model.predict(graph).expect("forward");
    outs.iter()
        .zip(weights)
        .map(|(y, w)| y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

pub fn random_probe(model: &GnnModel<f64>, graph: &Graph<f64>, seed: u64) -> Vec<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model
        .predict(graph)
        .expect("forward")
        .iter()
        .map(|y| {
            Tensor::from_vec(
                y.rows(),
                y.cols(),
                (0..y.rows() * y.cols())
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect(),
            )
        })
        .collect()
}

/// Max relative error between backprop and central differences over every
/// parameter of `model`.
pub fn model_gradient_error(model: &GnnModel<f64>, graph: &Graph<f64>, seed: u64) -> f64 {
    let weights = random_probe(model, graph, seed);
    let (_, cache) = model.forward(graph).expect("forward");
    let analytic = model.backward(&cache, &weights).expect("backward");
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    for (ti, tensor) in analytic.tensors.iter().enumerate() {
        for (i, &a) in tensor.iter().enumerate() {
            let orig = probe.params()[ti][i];
            probe.params_mut()[ti][i] = orig + FD_STEP;
            let plus = probe_loss(&probe, graph, &weights);
            probe.params_mut()[ti][i] = orig - FD_STEP;
            let minus = probe_loss(&probe, graph, &weights);
            probe.params_mut()[ti][i] = orig;
            let n = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(a, n));
        }
    }
    worst
}

type LossFn = fn(&[f64], &[f64]) -> Result<loss::LossValue<f64>, mvpose::nn::NnError>;

/// Max relative error of a loss gradient w.r.t. its prediction input.
pub fn loss_gradient_error(f: LossFn, pred: &[f64], target: &[f64]) -> f64 {
    let analytic = f(pred, target).unwrap().grad;
    let mut worst: f64 = 0.0;
    let mut p = pred.to_vec();
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + FD_STEP;
        let plus = f(&p, target).unwrap().loss;
        p[i] = orig - FD_STEP;
        let minus = f(&p, target).unwrap().loss;
        p[i] = orig;
        worst = worst.max(rel_err(analytic[i], (plus - minus) / (2.0 * FD_STEP)));
    }
    worst
}

/// Random directed graph on `v` vertices with edge attributes and a
/// grouping into `groups` parts (every part non-empty).
pub fn random_graph(seed: u64, v: usize, f: usize, fe: usize, groups: usize) -> Graph<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let feats = (0..v * f).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut edges = Vec::new();
    for s in 0..v {
        for d in 0..v {
            if s != d && rng.random_bool(0.15) {
                edges.push((s, d));
            }
        }
    }
    let n = edges.len();
    let ef = (0..n * fe).map(|_| rng.random_range(0.0..1.0)).collect();
    Graph::new(Tensor::from_vec(v, f, feats), edges)
        .with_edge_features(Tensor::from_vec(n, fe, ef))
        .with_groups((0..v).map(|i| i % groups).collect())
}

/// Adds small uniform noise to every parameter, biases included, so the
/// check runs at a generic point rather than on exact ReLU / max kinks
/// produced by zero-initialised biases.
pub fn jitter_params(model: &mut GnnModel<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for p in model.params_mut() {
        for v in p.iter_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
}
