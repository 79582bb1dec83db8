//! Centre refinement graph: coarse-to-fine search for 3D person centres
//! inside balls around coarse proposals, scoring each query point with a
//! small graph network over the camera views.

use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::FeatureSource;
use crate::mmg::MatchResult;
use crate::nn::{loss, Activation, Graph, Init, ModelBuilder, NnError, Tensor};
use crate::synth::{mix_seed, stream_rng, Bounds, FeatureOracle, OracleConfig, Scene};
use crate::train::{batches, optimizer, step, EpochStats, History, TrainConfig};
use crate::{Camera, Model, PipelineError};

pub const ARCHITECTURE: &str = "crg";
pub const MLP_ARCHITECTURE: &str = "crg-mlp-baseline";

/// Coarse-to-fine search parameters. Each iteration samples a cubic
/// lattice of the current pitch inside a ball of the current radius; the
/// next iteration shrinks the radius by `gamma` and the pitch by
/// `gamma_prime`, and the search ends after the first iteration whose pitch
/// is at most `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSchedule {
    pub r0: f64,
    pub tau0: f64,
    pub gamma: f64,
    pub gamma_prime: f64,
    pub epsilon: f64,
}

impl Default for SearchSchedule {
    fn default() -> Self {
        Self {
            r0: 300.0,
            tau0: 200.0,
            gamma: 0.6,
            gamma_prime: 0.25,
            epsilon: 50.0,
        }
    }
}

/// One search iteration: lattice pitch and ball radius (mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub pitch: f64,
    pub radius: f64,
}

impl SearchSchedule {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let ok = self.gamma > 0.0
            && self.gamma < 1.0
            && self.gamma_prime > 0.0
            && self.gamma_prime < 1.0
            && self.epsilon > 0.0
            && self.epsilon <= self.tau0
            && self.r0 > 0.0
            && self.tau0.is_finite()
            && self.r0.is_finite();
        if ok {
            Ok(())
        } else {
            Err(PipelineError::Config(format!("invalid search schedule {self:?}")))
        }
    }

    pub fn levels(&self) -> Result<Vec<Level>, PipelineError> {
        self.validate()?;
        let mut out = Vec::new();
        let (mut pitch, mut radius) = (self.tau0, self.r0);
        loop {
            out.push(Level { pitch, radius });
            if pitch <= self.epsilon {
                return Ok(out);
            }
            pitch *= self.gamma_prime;
            radius *= self.gamma;
        }
    }

    /// Queries spent on one ball when no lattice point leaves the bounds.
    pub fn queries_per_ball(&self) -> Result<usize, PipelineError> {
        Ok(self.levels()?.iter().map(|l| lattice_offsets(l).len()).sum())
    }
}

/// Integer offsets `(i, j, k)` with `|pitch * (i, j, k)| <= radius`, in
/// lexicographic order.
pub fn lattice_offsets(level: &Level) -> Vec<[i64; 3]> {
    let n = (level.radius / level.pitch).floor() as i64;
    let r2 = level.radius * level.radius * (1.0 + 1e-12);
    let mut out = Vec::new();
    for i in -n..=n {
        for j in -n..=n {
            for k in -n..=n {
                let d2 = ((i * i + j * j + k * k) as f64) * level.pitch * level.pitch;
                if d2 <= r2 {
                    out.push([i, j, k]);
                }
            }
        }
    }
    out
}

/// Full-grid scan size at pitch `pitch` over `bounds`.
pub fn grid_query_count(bounds: &Bounds, pitch: f64) -> usize {
    let e = bounds.extent();
    (0..3)
        .map(|a| (e[a] / pitch).floor() as usize + 1)
        .product()
}

/// Scores a batch of 3D points; one confidence per point.
pub trait PointScorer {
    fn score_points(&self, points: &[Vector3<f64>]) -> Result<Vec<f64>, PipelineError>;
}

impl<F> PointScorer for F
where
    F: Fn(&[Vector3<f64>]) -> Result<Vec<f64>, PipelineError>,
{
    fn score_points(&self, points: &[Vector3<f64>]) -> Result<Vec<f64>, PipelineError> {
        self(points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryTrace {
    pub point: [f64; 3],
    pub score: f64,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub center: [f64; 3],
    pub confidence: f64,
    pub queries: usize,
    pub trace: Vec<QueryTrace>,
}

/// Coarse-to-fine argmax search around `coarse`. Lattice points outside
/// `bounds` are skipped; ties go to the lexicographically lowest point.
pub fn refine_center<S: PointScorer + ?Sized>(
    scorer: &S,
    coarse: &Vector3<f64>,
    schedule: &SearchSchedule,
    bounds: &Bounds,
) -> Result<Refinement, PipelineError> {
    if !bounds.contains(coarse) {
        return Err(PipelineError::OutOfBounds((*coarse).into()));
    }
    let mut center = *coarse;
    let mut confidence = f64::NEG_INFINITY;
    let mut queries = 0;
    let mut trace = Vec::new();
    for (iteration, level) in schedule.levels()?.iter().enumerate() {
        let points: Vec<Vector3<f64>> = lattice_offsets(level)
            .iter()
            .map(|o| center + Vector3::new(o[0] as f64, o[1] as f64, o[2] as f64) * level.pitch)
            .filter(|p| bounds.contains(p))
            .collect();
        let scores = scorer.score_points(&points)?;
        if scores.len() != points.len() {
            return Err(PipelineError::Contract("scorer returned wrong count".into()));
        }
        queries += points.len();
        let mut best: Option<(Vector3<f64>, f64)> = None;
        for (p, &s) in points.iter().zip(&scores) {
            trace.push(QueryTrace {
                point: (*p).into(),
                score: s,
                iteration,
            });
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((*p, s));
            }
        }
        if let Some((p, s)) = best {
            center = p;
            confidence = s;
        }
    }
    Ok(Refinement {
        center: center.into(),
        confidence: confidence.max(0.0),
        queries,
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrgConfig {
    pub hidden: usize,
    pub schedule: SearchSchedule,
    pub dedupe_radius_mm: f64,
    pub accept_threshold: f64,
    /// Feature channel read as the 2D centre confidence.
    pub confidence_channel: usize,
    /// Width of the MLP-Baseline hidden layers.
    pub mlp_hidden: usize,
}

impl Default for CrgConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            schedule: SearchSchedule::default(),
            dedupe_radius_mm: 500.0,
            accept_threshold: 0.3,
            confidence_channel: OracleConfig::default().center_channel(),
            mlp_hidden: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedCenter {
    pub center: [f64; 3],
    pub confidence: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RefinedCenters {
    pub centers: Vec<RefinedCenter>,
    pub query_count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub traces: Vec<Vec<QueryTrace>>,
}

/// Refine every coarse centre of `matches` that lies inside `bounds`, merge
/// refined centres closer than the dedupe radius (highest confidence wins)
/// and drop those below the acceptance threshold.
pub fn detect_centers<S: PointScorer + ?Sized>(
    scorer: &S,
    matches: &MatchResult,
    cfg: &CrgConfig,
    bounds: &Bounds,
) -> Result<RefinedCenters, PipelineError> {
    detect_from_proposals(scorer, &matches.coarse_centers(), cfg, bounds)
}

pub fn detect_from_proposals<S: PointScorer + ?Sized>(
    scorer: &S,
    coarse: &[Vector3<f64>],
    cfg: &CrgConfig,
    bounds: &Bounds,
) -> Result<RefinedCenters, PipelineError> {
    let mut refined = Vec::new();
    let mut out = RefinedCenters::default();
    for c in coarse.iter().filter(|c| bounds.contains(c)) {
        let r = refine_center(scorer, c, &cfg.schedule, bounds)?;
        out.query_count += r.queries;
        refined.push(RefinedCenter {
            center: r.center,
            confidence: r.confidence,
        });
        out.traces.push(r.trace);
    }
    out.centers = dedupe(refined, cfg.dedupe_radius_mm)
        .into_iter()
        .filter(|c| c.confidence >= cfg.accept_threshold)
        .collect();
    Ok(out)
}

pub(crate) fn dedupe(mut centers: Vec<RefinedCenter>, radius: f64) -> Vec<RefinedCenter> {
    let mut idx: Vec<usize> = (0..centers.len()).collect();
    idx.sort_by(|&a, &b| {
        centers[b]
            .confidence
            .total_cmp(&centers[a].confidence)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<RefinedCenter> = Vec::new();
    for i in idx {
        let c = Vector3::from(centers[i].center);
        if kept
            .iter()
            .all(|k| (Vector3::from(k.center) - c).norm() >= radius)
        {
            kept.push(std::mem::replace(
                &mut centers[i],
                RefinedCenter {
                    center: [0.0; 3],
                    confidence: 0.0,
                },
            ));
        }
    }
    kept
}

/// Per-view vertex input: sampled visual feature (zeros when the point is
/// behind the camera or outside the image), normalised 3D coordinates and
/// the 2D centre confidence.
pub fn query_vertex_features<F: FeatureSource<f64> + ?Sized>(
    point: &Vector3<f64>,
    cameras: &[Camera],
    features: &F,
    bounds: &Bounds,
    confidence_channel: usize,
) -> Vec<Vec<f64>> {
    let norm = bounds.normalize(point);
    let c = features.channels();
    cameras
        .iter()
        .enumerate()
        .map(|(v, cam)| {
            let visual = match cam.project(point) {
                Ok(px) => features.sample_view(v, &px).values,
                Err(_) => vec![0.0; c],
            };
            let conf = visual.get(confidence_channel).copied().unwrap_or(0.0);
            let mut row = visual;
            row.extend_from_slice(norm.as_slice());
            row.push(conf);
            row
        })
        .collect()
}

/// Query graph for one point: one vertex per view, fully connected.
pub fn query_graph<F: FeatureSource<f64> + ?Sized>(
    point: &Vector3<f64>,
    cameras: &[Camera],
    features: &F,
    bounds: &Bounds,
    confidence_channel: usize,
) -> Result<Graph<f64>, PipelineError> {
    if !bounds.contains(point) {
        return Err(PipelineError::OutOfBounds((*point).into()));
    }
    let rows = query_vertex_features(point, cameras, features, bounds, confidence_channel);
    let v = rows.len();
    let mut edges = Vec::with_capacity(v * v.saturating_sub(1));
    for a in 0..v {
        for b in 0..v {
            if a != b {
                edges.push((a, b));
            }
        }
    }
    Ok(Graph::new(Tensor::from_rows(&rows), edges)
        .with_groups(vec![0; v])
        .with_pooled(Graph::topology(1, Vec::new())))
}

/// Three EdgeConv layers (the first with a two-layer edge MLP, the last two
/// residual), max-pool over views, one FC layer with sigmoid.
pub fn build_model<R: Rng + ?Sized>(
    channels: usize,
    cfg: &CrgConfig,
    init: Init<'_, R>,
) -> Result<Model, NnError> {
    ModelBuilder::new(channels + 4)
        .edge_conv(&[cfg.hidden, cfg.hidden])
        .edge_conv(&[cfg.hidden])
        .residual()
        .edge_conv(&[cfg.hidden])
        .residual()
        .max_pool()
        .dense(1, Activation::Sigmoid)
        .build(init)
}

pub fn zero_model(channels: usize, cfg: &CrgConfig) -> Model {
    build_model::<ChaCha8Rng>(channels, cfg, Init::Zeros).expect("valid architecture")
}

/// MLP over the concatenated per-view query features; tied to a fixed
/// number of views.
pub fn build_mlp_baseline<R: Rng + ?Sized>(
    channels: usize,
    views: usize,
    cfg: &CrgConfig,
    init: Init<'_, R>,
) -> Result<Model, NnError> {
    ModelBuilder::new(views * (channels + 4))
        .dense(cfg.mlp_hidden, Activation::Relu)
        .dense(cfg.mlp_hidden, Activation::Relu)
        .dense(1, Activation::Sigmoid)
        .build(init)
}

pub fn zero_mlp_baseline(channels: usize, views: usize, cfg: &CrgConfig) -> Model {
    build_mlp_baseline::<ChaCha8Rng>(channels, views, cfg, Init::Zeros).expect("valid architecture")
}

fn mlp_input<F: FeatureSource<f64> + ?Sized>(
    model: &Model,
    point: &Vector3<f64>,
    cameras: &[Camera],
    features: &F,
    bounds: &Bounds,
    confidence_channel: usize,
) -> Result<Graph<f64>, PipelineError> {
    let width = cameras.len() * (features.channels() + 4);
    if width != model.input_width() {
        return Err(PipelineError::Contract(format!(
            "MLP baseline was built for {} inputs; {} views give {width}",
            model.input_width(),
            cameras.len()
        )));
    }
    if !bounds.contains(point) {
        return Err(PipelineError::OutOfBounds((*point).into()));
    }
    let row: Vec<f64> = query_vertex_features(point, cameras, features, bounds, confidence_channel)
        .concat();
    Ok(Graph::new(Tensor::from_vec(1, width, row), Vec::new()))
}

/// Which point-scoring network a [`Scorer`] wraps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    Graph,
    MlpBaseline,
}

/// A trained point scorer bound to one scene's cameras and features.
pub struct Scorer<'a, F: FeatureSource<f64> + ?Sized> {
    pub kind: ScorerKind,
    pub model: &'a Model,
    pub cameras: &'a [Camera],
    pub features: &'a F,
    pub bounds: Bounds,
    pub confidence_channel: usize,
}

impl<F: FeatureSource<f64> + ?Sized> Scorer<'_, F> {
    fn graph(&self, p: &Vector3<f64>) -> Result<Graph<f64>, PipelineError> {
        match self.kind {
            ScorerKind::Graph => {
                query_graph(p, self.cameras, self.features, &self.bounds, self.confidence_channel)
            }
            ScorerKind::MlpBaseline => mlp_input(
                self.model,
                p,
                self.cameras,
                self.features,
                &self.bounds,
                self.confidence_channel,
            ),
        }
    }
}

impl<F: FeatureSource<f64> + ?Sized> PointScorer for Scorer<'_, F> {
    fn score_points(&self, points: &[Vector3<f64>]) -> Result<Vec<f64>, PipelineError> {
        if points.is_empty() {
            return Ok(Vec::new());
        }
        let graphs = points
            .iter()
            .map(|p| self.graph(p))
            .collect::<Result<Vec<_>, _>>()?;
        let out = self.model.predict(&Graph::disjoint_union(&graphs)?)?;
        if out.len() != 1 || out[0].rows() != points.len() || out[0].cols() != 1 {
            return Err(PipelineError::Contract(
                "point scorer must output one value per query".into(),
            ));
        }
        Ok(out[0].data().to_vec())
    }
}

/// Confidence of one point under the graph model.
pub fn score_point<F: FeatureSource<f64> + ?Sized>(
    model: &Model,
    point: &Vector3<f64>,
    cameras: &[Camera],
    features: &F,
    bounds: &Bounds,
    confidence_channel: usize,
) -> Result<f64, PipelineError> {
    let s = Scorer {
        kind: ScorerKind::Graph,
        model,
        cameras,
        features,
        bounds: *bounds,
        confidence_channel,
    };
    Ok(s.score_points(std::slice::from_ref(point))?[0])
}

/// Confidence of one point under the MLP baseline.
pub fn mlp_baseline_score<F: FeatureSource<f64> + ?Sized>(
    model: &Model,
    point: &Vector3<f64>,
    cameras: &[Camera],
    features: &F,
    bounds: &Bounds,
    confidence_channel: usize,
) -> Result<f64, PipelineError> {
    let s = Scorer {
        kind: ScorerKind::MlpBaseline,
        model,
        cameras,
        features,
        bounds: *bounds,
        confidence_channel,
    };
    Ok(s.score_points(std::slice::from_ref(point))?[0])
}

/// Training target `max_j exp(-|x - c_j|^2 / (2 sigma^2))`.
pub fn target_confidence(point: &Vector3<f64>, centers: &[Vector3<f64>], sigma: f64) -> f64 {
    centers
        .iter()
        .map(|c| (-(point - c).norm_squared() / (2.0 * sigma * sigma)).exp())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrgSampling {
    /// Spread of positive samples around true centres (mm).
    pub sigma_pos: f64,
    /// Width of the target confidence (mm).
    pub sigma_target: f64,
    /// Positives per negative.
    pub positive_ratio: usize,
    pub samples_per_scene: usize,
}

impl Default for CrgSampling {
    fn default() -> Self {
        Self {
            sigma_pos: 400.0,
            sigma_target: 200.0,
            positive_ratio: 4,
            samples_per_scene: 64,
        }
    }
}

/// Training points for one scene: positives around true centres, negatives
/// uniform in the bounds, interleaved at `positive_ratio : 1`.
pub fn sample_points(
    scene: &Scene,
    sampling: &CrgSampling,
    seed: u64,
) -> Vec<(Vector3<f64>, f64)> {
    let mut rng = stream_rng(seed, &[]);
    let centers = scene.centers();
    let normal = Normal::new(0.0, sampling.sigma_pos).expect("valid sigma");
    let (lo, hi) = (scene.bounds.min_v(), scene.bounds.max_v());
    (0..sampling.samples_per_scene)
        .map(|i| {
            let p = if i % (sampling.positive_ratio + 1) < sampling.positive_ratio
                && !centers.is_empty()
            {
                let c = centers[rng.random_range(0..centers.len())];
                let off = Vector3::from_fn(|_, _| normal.sample(&mut rng));
                (c + off).zip_zip_map(&lo, &hi, |x, l, h| x.clamp(l, h))
            } else {
                Vector3::from_fn(|a, _| rng.random_range(lo[a]..=hi[a]))
            };
            (p, target_confidence(&p, &centers, sampling.sigma_target))
        })
        .collect()
}

const TAG_CRG: u64 = 0x435247;

/// l2 training of either scorer on sampled points. Metrics record the mean
/// absolute error of the confidence.
pub fn train_crg(
    model: &mut Model,
    kind: ScorerKind,
    scenes: &[Scene],
    oracle: &OracleConfig,
    cfg: &CrgConfig,
    sampling: &CrgSampling,
    train: &TrainConfig,
) -> Result<History, PipelineError> {
    let mut adam = optimizer(model, train);
    let mut history = History::default();
    let oracles = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| FeatureOracle::new(s, mix_seed(train.seed, &[TAG_CRG, i as u64]), *oracle))
        .collect::<Result<Vec<_>, _>>()?;
    for epoch in 0..train.epochs {
        let (mut loss_sum, mut steps) = (0.0, 0usize);
        let (mut abs_err, mut count) = (0.0, 0usize);
        for batch in batches(scenes.len(), train, TAG_CRG, epoch) {
            let mut graphs = Vec::new();
            let mut target = Vec::new();
            for &i in &batch {
                let seed = mix_seed(train.seed, &[TAG_CRG, i as u64, epoch as u64]);
                for (p, t) in sample_points(&scenes[i], sampling, seed) {
                    let g = match kind {
                        ScorerKind::Graph => query_graph(
                            &p,
                            &scenes[i].cameras,
                            &oracles[i],
                            &scenes[i].bounds,
                            cfg.confidence_channel,
                        )?,
                        ScorerKind::MlpBaseline => mlp_input(
                            model,
                            &p,
                            &scenes[i].cameras,
                            &oracles[i],
                            &scenes[i].bounds,
                            cfg.confidence_channel,
                        )?,
                    };
                    graphs.push(g);
                    target.push(t);
                }
            }
            if graphs.is_empty() {
                continue;
            }
            let union = Graph::disjoint_union(&graphs)?;
            let (value, outputs) = step(model, &mut adam, &union, |out| {
                let l = loss::l2(out[0].data(), &target)?;
                Ok((l.loss, vec![Tensor::from_vec(target.len(), 1, l.grad)]))
            })?;
            for (p, t) in outputs[0].data().iter().zip(&target) {
                abs_err += (p - t).abs();
                count += 1;
            }
            loss_sum += value;
            steps += 1;
        }
        let mut metrics = BTreeMap::new();
        metrics.insert("mean_abs_error".into(), abs_err / count.max(1) as f64);
        history.epochs.push(EpochStats {
            epoch,
            loss: loss_sum / steps.max(1) as f64,
            metrics,
        });
    }
    Ok(history)
}

/// Projection of `point` into every camera (None when behind it).
pub fn project_all(point: &Vector3<f64>, cameras: &[Camera]) -> Vec<Option<Vector2<f64>>> {
    cameras.iter().map(|c| c.project(point).ok()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::FeatureGrid;
    use crate::synth::{generate_scene, NoiseConfig, SceneSpec};

    #[test]
    fn default_schedule_levels() {
        let levels = SearchSchedule::default().levels().unwrap();
        let pitches: Vec<f64> = levels.iter().map(|l| l.pitch).collect();
        let radii: Vec<f64> = levels.iter().map(|l| l.radius).collect();
        assert_eq!(pitches, vec![200.0, 50.0]);
        assert_eq!(radii, vec![300.0, 180.0]);
    }

    #[test]
    fn schedule_validation() {
        let bad = [
            SearchSchedule { gamma: 1.0, ..Default::default() },
            SearchSchedule { gamma_prime: 0.0, ..Default::default() },
            SearchSchedule { epsilon: 300.0, ..Default::default() },
            SearchSchedule { r0: 0.0, ..Default::default() },
        ];
        for s in bad {
            assert!(s.levels().is_err(), "{s:?}");
        }
    }

    #[test]
    fn lattice_counts() {
        let l0 = Level { pitch: 200.0, radius: 300.0 };
        assert_eq!(lattice_offsets(&l0).len(), 19);
        let offs = lattice_offsets(&Level { pitch: 50.0, radius: 180.0 });
        let brute = (-3i64..=3)
            .flat_map(|i| (-3i64..=3).flat_map(move |j| (-3i64..=3).map(move |k| [i, j, k])))
            .filter(|o| ((o[0] * o[0] + o[1] * o[1] + o[2] * o[2]) as f64) * 2500.0 <= 180.0 * 180.0)
            .count();
        assert_eq!(offs.len(), brute);
        assert!(offs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn analytic_field_is_found() {
        let bounds = Bounds::default();
        let c = Vector3::new(123.0, -77.0, 940.0);
        let field = move |pts: &[Vector3<f64>]| -> Result<Vec<f64>, PipelineError> {
            Ok(pts
                .iter()
                .map(|p| (-(p - c).norm_squared() / (2.0 * 200.0 * 200.0)).exp())
                .collect())
        };
        let s = SearchSchedule::default();
        let dirs = [
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, -1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(1.0, 1.0, 1.0).normalize(),
            Vector3::new(-1.0, 2.0, -0.5).normalize(),
        ];
        for d in dirs {
            for dist in [0.0, 60.0, 150.0, 250.0] {
                let r = refine_center(&field, &(c + d * dist), &s, &bounds).unwrap();
                let err = (Vector3::from(r.center) - c).norm();
                assert!(err <= s.epsilon, "start {dist} along {d:?}: error {err}");
                assert_eq!(r.queries, s.queries_per_ball().unwrap());
            }
        }
    }

    #[test]
    fn ties_pick_lowest_point() {
        let flat = |pts: &[Vector3<f64>]| -> Result<Vec<f64>, PipelineError> { Ok(vec![1.0; pts.len()]) };
        let r = refine_center(
            &flat,
            &Vector3::new(0.0, 0.0, 1000.0),
            &SearchSchedule::default(),
            &Bounds::default(),
        )
        .unwrap();
        // Lowest lattice offsets: (-1, -1, 0) at pitch 200, then
        // (-3, -1, -1) at pitch 50.
        assert_eq!(r.center, [-350.0, -250.0, 950.0]);
    }

    #[test]
    fn target_formula() {
        let c = [Vector3::new(0.0, 0.0, 0.0)];
        assert_eq!(target_confidence(&c[0], &c, 200.0), 1.0);
        let p = Vector3::new(200.0, 0.0, 0.0);
        assert!((target_confidence(&p, &c, 200.0) - (-0.5f64).exp()).abs() < 1e-12);
        let two = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(600.0, 0.0, 0.0)];
        assert_eq!(target_confidence(&p, &two, 200.0), (-0.5f64).exp());
    }

    fn scene() -> Scene {
        generate_scene(4, 2, &SceneSpec::default()).unwrap().with_noise(NoiseConfig::zero())
    }

    #[test]
    fn zero_models_score_one_half() {
        let s = scene();
        let grids = vec![FeatureGrid::zeros(161, 121, 8, 4.0); s.num_views()];
        let p = s.persons[0].center();
        let m = zero_model(8, &CrgConfig::default());
        assert_eq!(score_point(&m, &p, &s.cameras, &grids, &s.bounds, 4).unwrap(), 0.5);
        let b = zero_mlp_baseline(8, s.num_views(), &CrgConfig::default());
        assert_eq!(mlp_baseline_score(&b, &p, &s.cameras, &grids, &s.bounds, 4).unwrap(), 0.5);
    }

    #[test]
    fn mlp_baseline_rejects_other_view_counts() {
        let s = scene();
        let four = s.with_views(&[0, 1, 2, 3]).unwrap();
        let grids = vec![FeatureGrid::zeros(161, 121, 8, 4.0); 4];
        let b = zero_mlp_baseline(8, 5, &CrgConfig::default());
        let r = mlp_baseline_score(&b, &s.persons[0].center(), &four.cameras, &grids, &s.bounds, 4);
        assert!(matches!(r, Err(PipelineError::Contract(_))));
    }

    #[test]
    fn out_of_bounds_point_is_rejected() {
        let s = scene();
        let grids = vec![FeatureGrid::zeros(161, 121, 8, 4.0); s.num_views()];
        let m = zero_model(8, &CrgConfig::default());
        let r = score_point(&m, &Vector3::new(0.0, 0.0, 5000.0), &s.cameras, &grids, &s.bounds, 4);
        assert!(matches!(r, Err(PipelineError::OutOfBounds(_))));
    }

    #[test]
    fn view_order_does_not_change_scores() {
        let s = scene();
        let oracle = FeatureOracle::new(&s, 2, OracleConfig::default()).unwrap();
        let grids = oracle.render_all();
        let mut rng = stream_rng(3, &[]);
        let m = build_model(32, &CrgConfig::default(), Init::Random(&mut rng)).unwrap();
        let perm = [3, 0, 4, 2, 1];
        let cams: Vec<Camera> = perm.iter().map(|&v| s.cameras[v].clone()).collect();
        let g2: Vec<_> = perm.iter().map(|&v| grids[v].clone()).collect();
        for p in [s.persons[0].center(), Vector3::new(500.0, 200.0, 800.0)] {
            let a = score_point(&m, &p, &s.cameras, &grids, &s.bounds, 16).unwrap();
            let b = score_point(&m, &p, &cams, &g2, &s.bounds, 16).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn empty_proposals_cost_nothing() {
        let f = |p: &[Vector3<f64>]| -> Result<Vec<f64>, PipelineError> { Ok(vec![1.0; p.len()]) };
        let r = detect_from_proposals(&f, &[], &CrgConfig::default(), &Bounds::default()).unwrap();
        assert!(r.centers.is_empty());
        assert_eq!(r.query_count, 0);
    }

    #[test]
    fn duplicate_proposals_merge() {
        let c = Vector3::new(0.0, 500.0, 950.0);
        let field = move |pts: &[Vector3<f64>]| -> Result<Vec<f64>, PipelineError> {
            Ok(pts
                .iter()
                .map(|p| (-(p - c).norm_squared() / (2.0 * 200.0 * 200.0)).exp())
                .collect())
        };
        let props = [c + Vector3::new(120.0, 0.0, 0.0), c - Vector3::new(0.0, 140.0, 60.0)];
        let r = detect_from_proposals(&field, &props, &CrgConfig::default(), &Bounds::default())
            .unwrap();
        assert_eq!(r.centers.len(), 1);
        assert!((Vector3::from(r.centers[0].center) - c).norm() <= 50.0);
        assert_eq!(r.query_count, 2 * SearchSchedule::default().queries_per_ball().unwrap());
    }

    #[test]
    fn sampling_ratio() {
        let s = scene();
        let pts = sample_points(&s, &CrgSampling::default(), 1);
        assert_eq!(pts.len(), 64);
        assert!(pts.iter().all(|(p, t)| s.bounds.contains(p) && (0.0..=1.0).contains(t)));
    }
}
