//! Multi-view matching graph: cross-view association of 2D person centres
//! by edge-connectivity prediction, then triangulation of coarse 3D centres.

use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{
    correspondence_score, fundamental_matrix, triangulate, FeatureSource, DEFAULT_SCORE_DECAY,
};
use crate::nn::{loss, sigmoid, Activation, Graph, Init, ModelBuilder, NnError, Tensor};
use crate::synth::{mix_seed, render_detections, Detection, FeatureOracle, OracleConfig, Scene};
use crate::train::{batches, optimizer, step, EpochStats, History, TrainConfig};
use crate::{Camera, Model, PipelineError};

pub const ARCHITECTURE: &str = "mmg";
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MmgConfig {
    pub hidden: usize,
    pub fc_hidden: usize,
    /// Decay `m` of the correspondence score `exp(-m d)`.
    pub score_decay: f64,
    pub threshold: f64,
}

impl Default for MmgConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            fc_hidden: 64,
            score_decay: DEFAULT_SCORE_DECAY,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

/// Two EdgeConv-E layers over the matching graph, then a two-layer FC head
/// on `[target, source - target]` rows producing one logit per directed edge.
pub fn build_model<R: Rng + ?Sized>(
    channels: usize,
    cfg: &MmgConfig,
    init: Init<'_, R>,
) -> Result<Model, NnError> {
    ModelBuilder::new(channels)
        .edge_conv_e(&[cfg.hidden], 1)
        .edge_conv_e(&[cfg.hidden], 1)
        .residual()
        .edge_readout()
        .dense(cfg.fc_hidden, Activation::Relu)
        .dense(1, Activation::Identity)
        .build(init)
}

pub fn zero_model(channels: usize, cfg: &MmgConfig) -> Model {
    build_model::<ChaCha8Rng>(channels, cfg, Init::Zeros).expect("valid architecture")
}

pub fn expected_signature(channels: usize, cfg: &MmgConfig) -> Vec<String> {
    zero_model(channels, cfg).signature()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchVertex {
    pub view: usize,
    pub detection: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchGraph {
    pub vertices: Vec<MatchVertex>,
    /// One row per vertex: feature sampled at the detection.
    pub features: Tensor<f64>,
    pub centers: Vec<Vector2<f64>>,
    /// Undirected cross-view pairs `(u, v)` with `u < v`.
    pub edges: Vec<(usize, usize)>,
    pub s_corr: Vec<f64>,
}

impl MatchGraph {
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Network input: both directions of every pair, carrying `s_corr`.
    pub fn to_graph(&self) -> Graph<f64> {
        let mut edges = Vec::with_capacity(2 * self.edges.len());
        let mut attr = Vec::with_capacity(2 * self.edges.len());
        for (&(u, v), &s) in self.edges.iter().zip(&self.s_corr) {
            edges.push((u, v));
            edges.push((v, u));
            attr.push(s);
            attr.push(s);
        }
        let n = edges.len();
        Graph::new(self.features.clone(), edges).with_edge_features(Tensor::from_vec(n, 1, attr))
    }
}

/// Vertices for every detection (view-major), edges for every cross-view pair.
pub fn build_match_graph<F: FeatureSource<f64> + ?Sized>(
    detections: &[Vec<Detection>],
    features: &F,
    cameras: &[Camera],
    score_decay: f64,
) -> Result<MatchGraph, PipelineError> {
    let views = cameras.len();
    if views < 2 {
        return Err(PipelineError::InsufficientViews(views));
    }
    if detections.len() != views || features.num_views() != views {
        return Err(PipelineError::Contract(format!(
            "{} detection lists and {} feature views for {views} cameras",
            detections.len(),
            features.num_views()
        )));
    }
    let c = features.channels();
    let mut vertices = Vec::new();
    let mut centers = Vec::new();
    let mut data = Vec::new();
    for (view, dets) in detections.iter().enumerate() {
        for (detection, d) in dets.iter().enumerate() {
            vertices.push(MatchVertex { view, detection });
            centers.push(d.center);
            data.extend(features.sample_view(view, &d.center).values);
        }
    }
    let mut pairs = BTreeMap::new();
    for a in 0..views {
        for b in a + 1..views {
            pairs.insert((a, b), fundamental_matrix(&cameras[a], &cameras[b])?);
        }
    }
    let mut edges = Vec::new();
    let mut s_corr = Vec::new();
    for u in 0..vertices.len() {
        for v in u + 1..vertices.len() {
            let (a, b) = (vertices[u].view, vertices[v].view);
            if a == b {
                continue;
            }
            let d = pairs[&(a, b)].symmetric_distance(&centers[u], &centers[v]);
            edges.push((u, v));
            s_corr.push(correspondence_score(d, score_decay)?);
        }
    }
    Ok(MatchGraph {
        features: Tensor::from_vec(vertices.len(), c, data),
        vertices,
        centers,
        edges,
        s_corr,
    })
}

/// Symmetrised logit per undirected edge: mean of the two directed outputs.
fn edge_logits(model: &Model, graph: &MatchGraph) -> Result<Vec<f64>, PipelineError> {
    if graph.edges.is_empty() {
        return Ok(Vec::new());
    }
    let out = model.predict(&graph.to_graph())?;
    check_output(&out, graph)?;
    Ok(symmetrize(&out[0]))
}

fn check_output(out: &[Tensor<f64>], graph: &MatchGraph) -> Result<(), PipelineError> {
    if out.len() != 1 || out[0].cols() != 1 || out[0].rows() != 2 * graph.edges.len() {
        return Err(PipelineError::Contract(
            "model does not produce one logit per directed edge".into(),
        ));
    }
    Ok(())
}

fn symmetrize(directed: &Tensor<f64>) -> Vec<f64> {
    directed
        .data()
        .chunks(2)
        .map(|p| 0.5 * (p[0] + p[1]))
        .collect()
}

/// Connectivity probability per undirected edge of `graph`.
pub fn predict_connectivity(model: &Model, graph: &MatchGraph) -> Result<Vec<f64>, PipelineError> {
    Ok(edge_logits(model, graph)?.into_iter().map(sigmoid).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// `(view, detection)` members, sorted; at most one per view.
    pub members: Vec<(usize, usize)>,
    /// Triangulated centre for clusters of two or more members.
    pub center: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub clusters: Vec<Cluster>,
    pub edge_scores: Vec<f64>,
}

impl MatchResult {
    pub fn coarse_centers(&self) -> Vec<Vector3<f64>> {
        self.clusters
            .iter()
            .filter_map(|c| c.center.map(Vector3::from))
            .collect()
    }
}

/// Greedy constrained agglomeration: edges in decreasing score order merge
/// their clusters when the score clears `threshold` and the merged cluster
/// still has at most one detection per view. Equal scores resolve by edge
/// order. Clusters of two or more detections are triangulated.
pub fn resolve_clusters(
    graph: &MatchGraph,
    scores: &[f64],
    threshold: f64,
    cameras: &[Camera],
) -> Result<MatchResult, PipelineError> {
    if scores.len() != graph.edges.len() {
        return Err(PipelineError::Contract(format!(
            "{} scores for {} edges",
            scores.len(),
            graph.edges.len()
        )));
    }
    let n = graph.num_vertices();
    let views = cameras.len();
    let mut parent: Vec<usize> = (0..n).collect();
    let mut view_sets: Vec<Vec<bool>> = graph
        .vertices
        .iter()
        .map(|v| {
            let mut s = vec![false; views];
            s[v.view] = true;
            s
        })
        .collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    for e in order {
        if !(scores[e] >= threshold) {
            break;
        }
        let (u, v) = graph.edges[e];
        let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
        if ru == rv {
            continue;
        }
        let clash = view_sets[ru]
            .iter()
            .zip(&view_sets[rv])
            .any(|(&a, &b)| a && b);
        if clash {
            continue;
        }
        let (keep, drop) = if ru < rv { (ru, rv) } else { (rv, ru) };
        parent[drop] = keep;
        let moved = std::mem::take(&mut view_sets[drop]);
        for (k, m) in view_sets[keep].iter_mut().zip(moved) {
            *k |= m;
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for u in 0..n {
        let r = find(&mut parent, u);
        groups.entry(r).or_default().push(u);
    }
    let mut clusters = Vec::with_capacity(groups.len());
    for members in groups.into_values() {
        let center = if members.len() >= 2 {
            let obs: Vec<_> = members
                .iter()
                .map(|&m| (&cameras[graph.vertices[m].view], graph.centers[m]))
                .collect();
            triangulate(&obs).ok().map(Into::into)
        } else {
            None
        };
        let mut members: Vec<(usize, usize)> = members
            .iter()
            .map(|&m| (graph.vertices[m].view, graph.vertices[m].detection))
            .collect();
        members.sort_unstable();
        clusters.push(Cluster { members, center });
    }
    Ok(MatchResult {
        clusters,
        edge_scores: scores.to_vec(),
    })
}

/// Learned matching: predict connectivity, then resolve.
pub fn match_views<F: FeatureSource<f64> + ?Sized>(
    model: &Model,
    detections: &[Vec<Detection>],
    features: &F,
    cameras: &[Camera],
    cfg: &MmgConfig,
) -> Result<MatchResult, PipelineError> {
    let graph = build_match_graph(detections, features, cameras, cfg.score_decay)?;
    let scores = predict_connectivity(model, &graph)?;
    resolve_clusters(&graph, &scores, cfg.threshold, cameras)
}

/// Geometric baseline: `s_corr` itself as the edge score, same resolver.
pub fn match_epipolar<F: FeatureSource<f64> + ?Sized>(
    detections: &[Vec<Detection>],
    features: &F,
    cameras: &[Camera],
    cfg: &MmgConfig,
) -> Result<MatchResult, PipelineError> {
    let graph = build_match_graph(detections, features, cameras, cfg.score_decay)?;
    let scores = graph.s_corr.clone();
    resolve_clusters(&graph, &scores, cfg.threshold, cameras)
}

/// Same-identity targets per undirected edge; clutter never matches.
pub fn edge_targets(graph: &MatchGraph, detections: &[Vec<Detection>]) -> Vec<f64> {
    let id = |m: &MatchVertex| detections[m.view][m.detection].identity;
    graph
        .edges
        .iter()
        .map(|&(u, v)| {
            match (id(&graph.vertices[u]), id(&graph.vertices[v])) {
                (Some(a), Some(b)) if a == b => 1.0,
                _ => 0.0,
            }
        })
        .collect()
}

const TAG_MMG: u64 = 0x4d4d47;

/// Override for the per-edge targets, used for sanity runs.
pub type TargetFn<'a> = &'a dyn Fn(&MatchGraph, &[Vec<Detection>]) -> Vec<f64>;

/// Binary cross-entropy training on jittered ground-truth centres.
/// Each epoch draws fresh jitter; metrics record edge accuracy at 0.5.
pub fn train_mmg(
    model: &mut Model,
    scenes: &[Scene],
    oracle: &OracleConfig,
    cfg: &MmgConfig,
    train: &TrainConfig,
) -> Result<History, PipelineError> {
    train_mmg_with_targets(model, scenes, oracle, cfg, train, &edge_targets)
}

pub fn train_mmg_with_targets(
    model: &mut Model,
    scenes: &[Scene],
    oracle: &OracleConfig,
    cfg: &MmgConfig,
    train: &TrainConfig,
    targets: TargetFn<'_>,
) -> Result<History, PipelineError> {
    let mut adam = optimizer(model, train);
    let mut history = History::default();
    let oracles = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| FeatureOracle::new(s, mix_seed(train.seed, &[TAG_MMG, i as u64]), *oracle))
        .collect::<Result<Vec<_>, _>>()?;
    for epoch in 0..train.epochs {
        let (mut loss_sum, mut steps) = (0.0, 0usize);
        let (mut correct, mut total) = (0usize, 0usize);
        for batch in batches(scenes.len(), train, TAG_MMG, epoch) {
            let mut parts = Vec::new();
            let mut graphs = Vec::new();
            let mut target = Vec::new();
            for &i in &batch {
                let seed = mix_seed(train.seed, &[TAG_MMG, i as u64, epoch as u64]);
                let dets = render_detections(&scenes[i], seed, true);
                let g = build_match_graph(&dets, &oracles[i], &scenes[i].cameras, cfg.score_decay)?;
                if g.edges.is_empty() {
                    continue;
                }
                target.extend(targets(&g, &dets));
                parts.push(g.to_graph());
                graphs.push(g);
            }
            if parts.is_empty() {
                continue;
            }
            let union = Graph::disjoint_union(&parts)?;
            let (value, outputs) = step(model, &mut adam, &union, |out| {
                let logits = symmetrize(&out[0]);
                let l = loss::bce_with_logits(&logits, &target)?;
                let mut g = Tensor::zeros(out[0].rows(), 1);
                for (e, &ge) in l.grad.iter().enumerate() {
                    g.set(2 * e, 0, 0.5 * ge);
                    g.set(2 * e + 1, 0, 0.5 * ge);
                }
                Ok((l.loss, vec![g]))
            })?;
            for (z, t) in symmetrize(&outputs[0]).iter().zip(&target) {
                total += 1;
                if (*z >= 0.0) == (*t >= 0.5) {
                    correct += 1;
                }
            }
            loss_sum += value;
            steps += 1;
        }
        let mut metrics = BTreeMap::new();
        metrics.insert(
            "edge_accuracy".to_string(),
            correct as f64 / total.max(1) as f64,
        );
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
    use crate::synth::{generate_scene, NoiseConfig, SceneSpec};

    fn det(x: f64, y: f64, id: Option<usize>) -> Detection {
        Detection {
            center: Vector2::new(x, y),
            confidence: 1.0,
            identity: id,
        }
    }

    fn blank(views: usize) -> Vec<FeatureGrid<f64>> {
        vec![FeatureGrid::zeros(161, 121, 4, 4.0); views]
    }

    fn scene(views: usize) -> Scene {
        let mut spec = SceneSpec::default();
        spec.rig.views = views.max(3);
        let s = generate_scene(3, 2, &spec).unwrap().with_noise(NoiseConfig::zero());
        if views < 3 {
            s.with_views(&(0..views).collect::<Vec<_>>()).unwrap()
        } else {
            s
        }
    }

    #[test]
    fn graph_combinatorics() {
        let s = scene(2);
        let dets = vec![
            vec![det(10.0, 10.0, None), det(20.0, 20.0, None)],
            vec![det(30.0, 30.0, None), det(40.0, 40.0, None)],
        ];
        let g = build_match_graph(&dets, &blank(2), &s.cameras, 10.0).unwrap();
        assert_eq!(g.num_vertices(), 4);
        assert_eq!(g.edges.len(), 4);
        assert!(g.edges.iter().all(|&(u, v)| g.vertices[u].view != g.vertices[v].view));
        assert!(g.s_corr.iter().all(|s| (0.0..=1.0).contains(s)));

        let mut spec = SceneSpec::default();
        spec.rig.views = 5;
        let s5 = generate_scene(1, 1, &spec).unwrap();
        let dets: Vec<_> = (0..5).map(|_| vec![det(100.0, 100.0, None)]).collect();
        let g = build_match_graph(&dets, &blank(5), &s5.cameras, 10.0).unwrap();
        assert_eq!((g.num_vertices(), g.edges.len()), (5, 10));
    }

    #[test]
    fn single_view_is_rejected() {
        let s = scene(3);
        let r = build_match_graph(&[vec![]], &blank(1), &s.cameras[..1], 10.0);
        assert!(matches!(r, Err(PipelineError::InsufficientViews(1))));
    }

    #[test]
    fn true_correspondences_score_high() {
        let s = scene(4);
        let dets = render_detections(&s, 0, false);
        let g = build_match_graph(&dets, &blank(4), &s.cameras, 10.0).unwrap();
        let t = edge_targets(&g, &dets);
        for (sc, t) in g.s_corr.iter().zip(&t) {
            if *t == 1.0 {
                assert!(*sc > 0.99, "{sc}");
            }
        }
    }

    #[test]
    fn zero_model_scores_one_half_symmetrically() {
        let s = scene(3);
        let dets = render_detections(&s, 0, false);
        let g = build_match_graph(&dets, &blank(3), &s.cameras, 10.0).unwrap();
        let m = zero_model(4, &MmgConfig::default());
        let scores = predict_connectivity(&m, &g).unwrap();
        assert!(scores.iter().all(|&x| x == 0.5));
    }

    #[test]
    fn scores_are_direction_symmetric() {
        let s = scene(3);
        let dets = render_detections(&s, 0, false);
        let oracle = FeatureOracle::new(&s, 1, OracleConfig::default()).unwrap();
        let g = build_match_graph(&dets, &oracle, &s.cameras, 10.0).unwrap();
        let mut rng = crate::synth::stream_rng(1, &[]);
        let m = build_model(32, &MmgConfig::default(), Init::Random(&mut rng)).unwrap();
        let out = m.predict(&g.to_graph()).unwrap();
        let directed = out[0].data();
        let scores = predict_connectivity(&m, &g).unwrap();
        for (e, s) in scores.iter().enumerate() {
            let (a, b) = (directed[2 * e], directed[2 * e + 1]);
            assert_ne!(a, b);
            assert_eq!(*s, sigmoid(0.5 * (b + a)));
        }
    }

    #[test]
    fn perfect_scores_recover_identities() {
        let s = scene(4);
        let dets = render_detections(&s, 0, false);
        let g = build_match_graph(&dets, &blank(4), &s.cameras, 10.0).unwrap();
        let t = edge_targets(&g, &dets);
        let r = resolve_clusters(&g, &t, 0.5, &s.cameras).unwrap();
        assert_eq!(r.clusters.len(), 2);
        for c in &r.clusters {
            let ids: Vec<_> = c.members.iter().map(|&(v, d)| dets[v][d].identity).collect();
            assert!(ids.windows(2).all(|w| w[0] == w[1]));
            let p = ids[0].unwrap();
            let center = Vector3::from(c.center.unwrap());
            assert!((center - s.persons[p].center()).norm() < 1e-6);
        }
    }

    #[test]
    fn low_scores_leave_singletons() {
        let s = scene(3);
        let dets = render_detections(&s, 0, false);
        let g = build_match_graph(&dets, &blank(3), &s.cameras, 10.0).unwrap();
        let r = resolve_clusters(&g, &vec![0.2; g.edges.len()], 0.5, &s.cameras).unwrap();
        assert_eq!(r.clusters.len(), g.num_vertices());
        assert!(r.coarse_centers().is_empty());
    }

    #[test]
    fn higher_conflicting_edge_wins() {
        // Detection 0 in view 0 is claimed by both detections of view 1.
        let s = scene(3);
        let dets = vec![
            vec![det(100.0, 100.0, None)],
            vec![det(200.0, 200.0, None), det(300.0, 300.0, None)],
            vec![],
        ];
        let g = build_match_graph(&dets, &blank(3), &s.cameras, 10.0).unwrap();
        assert_eq!(g.edges, vec![(0, 1), (0, 2)]);
        let r = resolve_clusters(&g, &[0.7, 0.9], 0.5, &s.cameras).unwrap();
        let joined: Vec<_> = r.clusters.iter().filter(|c| c.members.len() == 2).collect();
        assert_eq!(joined.len(), 1);
        assert_eq!(joined[0].members, vec![(0, 0), (1, 1)]);
    }
}
