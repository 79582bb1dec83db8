//! Pose regression graph: refines an initial 3D pose by regressing
//! per-joint offsets from a multi-view graph of its 2D projections.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::FeatureSource;
use crate::nn::{loss, Activation, Graph, Init, Layer, ModelBuilder, NnError, Tensor};
use crate::synth::{initial_pose, mix_seed, Bounds, FeatureOracle, OracleConfig, Scene};
use crate::train::{batches, optimizer, step, EpochStats, History, TrainConfig};
use crate::{Camera, Model, PipelineError};

pub const ARCHITECTURE: &str = "prg";

/// Edge type codes of the first-stage graph.
pub const SKELETON_EDGE: [f64; 2] = [1.0, 0.0];
pub const CROSS_VIEW_EDGE: [f64; 2] = [0.0, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrgConfig {
    pub hidden: usize,
    /// Millimetres per unit of the offset head output.
    pub offset_scale_mm: f64,
    /// Length scale of the confidence target `exp(-|offset|^2 / (2 s^2))`.
    pub confidence_scale_mm: f64,
    /// Use plain EdgeConv after pooling instead of EdgeConv-E on skeleton
    /// edges with a constant attribute.
    pub plain_post_pool: bool,
}

impl Default for PrgConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            offset_scale_mm: 100.0,
            confidence_scale_mm: 100.0,
            plain_post_pool: false,
        }
    }
}

/// Two EdgeConv-E layers on the (view, joint) graph, max-pool across views
/// into a per-joint skeleton graph, three more graph layers, then parallel
/// offset and confidence heads of two FC layers each.
pub fn build_model<R: Rng + ?Sized>(
    channels: usize,
    joints: usize,
    cfg: &PrgConfig,
    init: Init<'_, R>,
) -> Result<Model, NnError> {
    let h = cfg.hidden;
    let mut b = ModelBuilder::new(channels + joints + 3)
        .edge_conv_e(&[h], 2)
        .edge_conv_e(&[h], 2)
        .residual()
        .max_pool();
    for _ in 0..3 {
        b = if cfg.plain_post_pool {
            b.edge_conv(&[h])
        } else {
            b.edge_conv_e(&[h], 1)
        }
        .residual();
    }
    let mut model: Model = b
        .head()
        .dense(h, Activation::Relu)
        .dense(3, Activation::Identity)
        .head()
        .dense(h, Activation::Relu)
        .dense(1, Activation::Sigmoid)
        .build(init)?;
    // Start from the identity refinement: the offset head emits zeros.
    if let Some(Layer::Dense(d)) = model.heads_mut()[0].last_mut() {
        d.linear.weight.data_mut().fill(0.0);
        d.linear.bias.fill(0.0);
    }
    Ok(model)
}

pub fn zero_model(channels: usize, joints: usize, cfg: &PrgConfig) -> Model {
    build_model::<ChaCha8Rng>(channels, joints, cfg, Init::Zeros).expect("valid architecture")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeKind {
    Skeleton,
    CrossView,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraph {
    pub views: usize,
    pub joints: usize,
    /// Row `view * joints + joint`: visual feature, one-hot joint type,
    /// normalised 3D coordinates of the initial joint.
    pub features: Tensor<f64>,
    /// Undirected first-stage edges `(u, v)`, `u < v`.
    pub edges: Vec<(usize, usize)>,
    pub kinds: Vec<EdgeKind>,
    pub bones: Vec<(usize, usize)>,
    pub plain_post_pool: bool,
}

impl PoseGraph {
    pub fn count(&self, kind: EdgeKind) -> usize {
        self.kinds.iter().filter(|&&k| k == kind).count()
    }

    /// Network input: both directions of every edge with type codes, groups
    /// by joint, and the skeleton as the pooled level.
    pub fn to_graph(&self) -> Graph<f64> {
        let mut edges = Vec::with_capacity(2 * self.edges.len());
        let mut attr = Vec::with_capacity(4 * self.edges.len());
        for (&(u, v), kind) in self.edges.iter().zip(&self.kinds) {
            let code = match kind {
                EdgeKind::Skeleton => SKELETON_EDGE,
                EdgeKind::CrossView => CROSS_VIEW_EDGE,
            };
            for e in [(u, v), (v, u)] {
                edges.push(e);
                attr.extend_from_slice(&code);
            }
        }
        let n = edges.len();
        let mut coarse_edges = Vec::with_capacity(2 * self.bones.len());
        for &(a, b) in &self.bones {
            coarse_edges.push((a, b));
            coarse_edges.push((b, a));
        }
        let m = coarse_edges.len();
        let mut coarse = Graph::topology(self.joints, coarse_edges);
        if !self.plain_post_pool {
            coarse = coarse.with_edge_features(Tensor::from_vec(m, 1, vec![1.0; m]));
        }
        Graph::new(self.features.clone(), edges)
            .with_edge_features(Tensor::from_vec(n, 2, attr))
            .with_groups((0..self.views * self.joints).map(|i| i % self.joints).collect())
            .with_pooled(coarse)
    }
}

/// Project the initial pose into every view and assemble the pose graph.
/// Joints behind a camera or outside its image get zero visual features.
pub fn build_pose_graph<F: FeatureSource<f64> + ?Sized>(
    initial: &[Vector3<f64>],
    cameras: &[Camera],
    features: &F,
    bones: &[(usize, usize)],
    bounds: &Bounds,
    plain_post_pool: bool,
) -> Result<PoseGraph, PipelineError> {
    let k = initial.len();
    if bones.iter().any(|&(a, b)| a >= k || b >= k) {
        return Err(PipelineError::Contract(format!(
            "skeleton bones reference joints beyond {k}"
        )));
    }
    if features.num_views() != cameras.len() {
        return Err(PipelineError::Contract(format!(
            "{} feature views for {} cameras",
            features.num_views(),
            cameras.len()
        )));
    }
    let views = cameras.len();
    let c = features.channels();
    let mut data = Vec::with_capacity(views * k * (c + k + 3));
    for (v, cam) in cameras.iter().enumerate() {
        for (j, x) in initial.iter().enumerate() {
            match cam.project(x) {
                Ok(px) => data.extend(features.sample_view(v, &px).values),
                Err(_) => data.extend(std::iter::repeat_n(0.0, c)),
            }
            data.extend((0..k).map(|i| if i == j { 1.0 } else { 0.0 }));
            data.extend_from_slice(bounds.normalize(x).as_slice());
        }
    }
    let mut edges = Vec::new();
    let mut kinds = Vec::new();
    for v in 0..views {
        for &(a, b) in bones {
            let (u, w) = (v * k + a, v * k + b);
            edges.push((u.min(w), u.max(w)));
            kinds.push(EdgeKind::Skeleton);
        }
    }
    for j in 0..k {
        for a in 0..views {
            for b in a + 1..views {
                edges.push((a * k + j, b * k + j));
                kinds.push(EdgeKind::CrossView);
            }
        }
    }
    Ok(PoseGraph {
        views,
        joints: k,
        features: Tensor::from_vec(views * k, c + k + 3, data),
        edges,
        kinds,
        bones: bones.to_vec(),
        plain_post_pool,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedPose {
    pub joints: Vec<[f64; 3]>,
    /// `joints - initial`, per joint.
    pub offsets: Vec<[f64; 3]>,
    pub joint_confidences: Vec<f64>,
}

fn check_outputs(out: &[Tensor<f64>], k: usize) -> Result<(), PipelineError> {
    if out.len() != 2
        || out[0].rows() != k
        || out[0].cols() != 3
        || out[1].rows() != k
        || out[1].cols() != 1
    {
        return Err(PipelineError::Contract(
            "model does not match the pose regression architecture".into(),
        ));
    }
    Ok(())
}

fn assemble(initial: &[Vector3<f64>], out: &[Tensor<f64>], scale: f64) -> RefinedPose {
    let mut joints = Vec::with_capacity(initial.len());
    let mut offsets = Vec::with_capacity(initial.len());
    for (j, x) in initial.iter().enumerate() {
        let r = out[0].row(j);
        let refined = x + Vector3::new(r[0], r[1], r[2]) * scale;
        joints.push(refined.into());
        offsets.push((refined - x).into());
    }
    RefinedPose {
        joints,
        offsets,
        joint_confidences: out[1].data().to_vec(),
    }
}

pub fn refine_pose<F: FeatureSource<f64> + ?Sized>(
    model: &Model,
    initial: &[Vector3<f64>],
    cameras: &[Camera],
    features: &F,
    bones: &[(usize, usize)],
    bounds: &Bounds,
    cfg: &PrgConfig,
) -> Result<RefinedPose, PipelineError> {
    let g = build_pose_graph(initial, cameras, features, bones, bounds, cfg.plain_post_pool)?;
    let out = model.predict(&g.to_graph())?;
    check_outputs(&out, initial.len())?;
    Ok(assemble(initial, &out, cfg.offset_scale_mm))
}

/// `ground_truth - initial`, per joint.
pub fn target_offsets(initial: &[Vector3<f64>], truth: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    initial.iter().zip(truth).map(|(i, t)| t - i).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrgSampling {
    /// Initial-pose noise levels cycled over training persons (mm).
    pub sigmas_mm: Vec<f64>,
}

impl Default for PrgSampling {
    fn default() -> Self {
        Self {
            sigmas_mm: vec![30.0],
        }
    }
}

const TAG_PRG: u64 = 0x505247;

fn mean_error(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).sum::<f64>() / a.len().max(1) as f64
}

/// l1 on offsets plus l2 on the confidence head. Metrics record the mean
/// per-joint error before and after the (pre-update) predicted offsets.
pub fn train_prg(
    model: &mut Model,
    scenes: &[Scene],
    oracle: &OracleConfig,
    cfg: &PrgConfig,
    sampling: &PrgSampling,
    train: &TrainConfig,
) -> Result<History, PipelineError> {
    if sampling.sigmas_mm.is_empty() {
        return Err(PipelineError::Config("no initial-pose noise levels".into()));
    }
    let mut adam = optimizer(model, train);
    let mut history = History::default();
    let oracles = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| FeatureOracle::new(s, mix_seed(train.seed, &[TAG_PRG, i as u64]), *oracle))
        .collect::<Result<Vec<_>, _>>()?;
    let scale = cfg.offset_scale_mm;
    for epoch in 0..train.epochs {
        let (mut loss_sum, mut steps) = (0.0, 0usize);
        let (mut before, mut after, mut persons) = (0.0, 0.0, 0usize);
        for batch in batches(scenes.len(), train, TAG_PRG, epoch) {
            let mut graphs = Vec::new();
            let mut inits = Vec::new();
            let mut truths = Vec::new();
            for &i in &batch {
                let scene = &scenes[i];
                for (p, body) in scene.persons.iter().enumerate() {
                    let sigma = sampling.sigmas_mm[(i + p + epoch) % sampling.sigmas_mm.len()];
                    let noisy = scene.with_noise(crate::synth::NoiseConfig {
                        initial_pose_sigma_mm: sigma,
                        ..scene.noise
                    });
                    let seed = mix_seed(train.seed, &[TAG_PRG, i as u64, epoch as u64]);
                    let init = initial_pose(&noisy, p, seed)?;
                    let g = build_pose_graph(
                        &init,
                        &scene.cameras,
                        &oracles[i],
                        &body.bones,
                        &scene.bounds,
                        cfg.plain_post_pool,
                    )?;
                    graphs.push(g.to_graph());
                    truths.push(body.joints.clone());
                    inits.push(init);
                }
            }
            if graphs.is_empty() {
                continue;
            }
            let mut off_target = Vec::new();
            let mut conf_target = Vec::new();
            for (init, truth) in inits.iter().zip(&truths) {
                for t in target_offsets(init, truth) {
                    off_target.extend((t / scale).iter().copied());
                    let s = cfg.confidence_scale_mm;
                    conf_target.push((-t.norm_squared() / (2.0 * s * s)).exp());
                }
            }
            let union = Graph::disjoint_union(&graphs)?;
            let (value, outputs) = step(model, &mut adam, &union, |out| {
                let l_off = loss::l1(out[0].data(), &off_target)?;
                let l_conf = loss::l2(out[1].data(), &conf_target)?;
                Ok((
                    l_off.loss + l_conf.loss,
                    vec![
                        Tensor::from_vec(out[0].rows(), 3, l_off.grad),
                        Tensor::from_vec(out[1].rows(), 1, l_conf.grad),
                    ],
                ))
            })?;
            let mut row = 0;
            for (init, truth) in inits.iter().zip(&truths) {
                let refined: Vec<Vector3<f64>> = init
                    .iter()
                    .enumerate()
                    .map(|(j, x)| {
                        let r = outputs[0].row(row + j);
                        x + Vector3::new(r[0], r[1], r[2]) * scale
                    })
                    .collect();
                row += init.len();
                before += mean_error(init, truth);
                after += mean_error(&refined, truth);
                persons += 1;
            }
            loss_sum += value;
            steps += 1;
        }
        let n = persons.max(1) as f64;
        let mut metrics = BTreeMap::new();
        metrics.insert("mpjpe_before".into(), before / n);
        metrics.insert("mpjpe_after".into(), after / n);
        history.epochs.push(EpochStats {
            epoch,
            loss: loss_sum / steps.max(1) as f64,
            metrics,
        });
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::FeatureGrid;
    use crate::synth::{generate_scene, stream_rng, NoiseConfig, SceneSpec, DEFAULT_BONES};

    fn scene() -> Scene {
        generate_scene(8, 2, &SceneSpec::default())
            .unwrap()
            .with_noise(NoiseConfig::zero())
    }

    #[test]
    fn graph_combinatorics() {
        let s = scene();
        let grids = vec![FeatureGrid::zeros(161, 121, 8, 4.0); 5];
        let g = build_pose_graph(&s.persons[0].joints, &s.cameras, &grids, &DEFAULT_BONES, &s.bounds, false)
            .unwrap();
        assert_eq!(g.features.rows(), 75);
        assert_eq!(g.count(EdgeKind::CrossView), 150);
        assert_eq!(g.count(EdgeKind::Skeleton), 70);
        let graph = g.to_graph();
        graph.validate().unwrap();
        let ef = graph.edge_features.as_ref().unwrap();
        for r in 0..ef.rows() {
            let row = ef.row(r);
            assert!(row == SKELETON_EDGE || row == CROSS_VIEW_EDGE);
        }
    }

    #[test]
    fn single_view_has_only_skeleton_edges() {
        let s = scene();
        let grids = vec![FeatureGrid::zeros(161, 121, 8, 4.0); 1];
        let g = build_pose_graph(&s.persons[0].joints, &s.cameras[..1], &grids, &DEFAULT_BONES, &s.bounds, false)
            .unwrap();
        assert_eq!(g.count(EdgeKind::CrossView), 0);
        assert_eq!(g.count(EdgeKind::Skeleton), 14);
    }

    #[test]
    fn joints_behind_a_camera_get_zero_features() {
        let s = scene();
        let oracle = FeatureOracle::new(&s, 0, OracleConfig::default()).unwrap();
        let mut pose = s.persons[0].joints.clone();
        // Move one joint behind camera 0.
        let cam = &s.cameras[0];
        pose[5] = cam.center() - (s.persons[0].center() - cam.center()).normalize() * 500.0;
        let g = build_pose_graph(&pose, &s.cameras, &oracle, &DEFAULT_BONES, &s.bounds, false).unwrap();
        assert!(g.features.row(5)[..32].iter().all(|&x| x == 0.0));
        g.to_graph().validate().unwrap();
    }

    #[test]
    fn zero_model_leaves_pose_unchanged() {
        let s = scene();
        let oracle = FeatureOracle::new(&s, 0, OracleConfig::default()).unwrap();
        let cfg = PrgConfig::default();
        let m = zero_model(32, 15, &cfg);
        let init = &s.persons[1].joints;
        let r = refine_pose(&m, init, &s.cameras, &oracle, &DEFAULT_BONES, &s.bounds, &cfg).unwrap();
        for (a, b) in r.joints.iter().zip(init) {
            assert_eq!(Vector3::from(*a), *b);
        }
        assert!(r.joint_confidences.iter().all(|&c| c == 0.5));
    }

    #[test]
    fn refined_minus_initial_is_the_offset() {
        let s = scene();
        let oracle = FeatureOracle::new(&s, 0, OracleConfig::default()).unwrap();
        let cfg = PrgConfig::default();
        let mut rng = stream_rng(4, &[]);
        let m = build_model(32, 15, &cfg, Init::Random(&mut rng)).unwrap();
        let init = &s.persons[0].joints;
        let r = refine_pose(&m, init, &s.cameras, &oracle, &DEFAULT_BONES, &s.bounds, &cfg).unwrap();
        for ((j, o), i) in r.joints.iter().zip(&r.offsets).zip(init) {
            assert_eq!(Vector3::from(*j) - i, Vector3::from(*o));
        }
        assert!(r.joint_confidences.iter().all(|c| (0.0..=1.0).contains(c)));
    }

    #[test]
    fn camera_order_does_not_change_the_pose() {
        let s = scene();
        let oracle = FeatureOracle::new(&s, 0, OracleConfig::default()).unwrap();
        let grids = oracle.render_all();
        let cfg = PrgConfig::default();
        let mut rng = stream_rng(5, &[]);
        let m = build_model(32, 15, &cfg, Init::Random(&mut rng)).unwrap();
        let perm = [2, 4, 1, 0, 3];
        let cams: Vec<Camera> = perm.iter().map(|&v| s.cameras[v].clone()).collect();
        let g2: Vec<_> = perm.iter().map(|&v| grids[v].clone()).collect();
        let init = &s.persons[0].joints;
        let a = refine_pose(&m, init, &s.cameras, &grids, &DEFAULT_BONES, &s.bounds, &cfg).unwrap();
        let b = refine_pose(&m, init, &cams, &g2, &DEFAULT_BONES, &s.bounds, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn target_offset_is_truth_minus_initial() {
        let truth = vec![Vector3::new(1.0, 2.0, 3.0); 2];
        let mut init = truth.clone();
        init[1].x += 10.0;
        let t = target_offsets(&init, &truth);
        assert_eq!(t[0], Vector3::zeros());
        assert_eq!(t[1], Vector3::new(-10.0, 0.0, 0.0));
    }

    #[test]
    fn plain_post_pool_variant_runs() {
        let s = scene();
        let grids = vec![FeatureGrid::zeros(161, 121, 8, 4.0); 5];
        let cfg = PrgConfig { plain_post_pool: true, ..PrgConfig::default() };
        let mut rng = stream_rng(6, &[]);
        let m = build_model(8, 15, &cfg, Init::Random(&mut rng)).unwrap();
        let r = refine_pose(&m, &s.persons[0].joints, &s.cameras, &grids, &DEFAULT_BONES, &s.bounds, &cfg)
            .unwrap();
        assert!(r.offsets.iter().flatten().all(|x| x.is_finite()));
    }
}
