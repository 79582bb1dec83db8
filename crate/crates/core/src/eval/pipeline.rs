//! Full-frame inference: matching, centre detection and pose regression.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::config::{Centers, Matching, PipelineConfig, Variant};
use crate::crg::{self, RefinedCenter, RefinedCenters, Scorer, ScorerKind};
use crate::mmg::{self, MatchResult};
use crate::Model;
use crate::prg;
use crate::synth::{initial_pose, mix_seed, render_detections, Detection, FeatureOracle, Scene, Skeleton, CENTER_JOINT};
use crate::PipelineError;

/// Trained weights; a variant only needs the models it names.
#[derive(Debug, Clone, Default)]
pub struct Models {
    pub mmg: Option<Model>,
    pub crg: Option<Model>,
    pub mlp: Option<Model>,
    pub prg: Option<Model>,
}

fn need<'a>(m: &'a Option<Model>, name: &str) -> Result<&'a Model, PipelineError> {
    m.as_ref()
        .ok_or_else(|| PipelineError::Config(format!("variant needs trained {name} weights")))
}

impl Models {
    pub fn check(&self, variant: &Variant) -> Result<(), PipelineError> {
        if variant.matching == Matching::Mmg {
            need(&self.mmg, "mmg")?;
        }
        match variant.centers {
            Centers::Crg => {
                need(&self.crg, "crg")?;
            }
            Centers::MlpBaseline => {
                need(&self.mlp, "mlp-baseline")?;
            }
            Centers::Triangulation => {}
        }
        if variant.prg {
            need(&self.prg, "prg")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonEstimate {
    pub center: [f64; 3],
    pub score: f64,
    pub joints: Vec<[f64; 3]>,
    /// Per-joint PRG confidences; empty without PRG.
    pub joint_confidences: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameOutput {
    pub matches: MatchResult,
    pub coarse_centers: Vec<[f64; 3]>,
    pub centers: RefinedCenters,
    pub persons: Vec<PersonEstimate>,
    #[serde(skip)]
    pub detections: Vec<Vec<Detection>>,
}

const TAG_FRAME: u64 = 0x4652;

/// Same-identity clustering through the ordinary resolver.
pub fn match_ground_truth(
    detections: &[Vec<Detection>],
    features: &FeatureOracle,
    scene: &Scene,
    cfg: &mmg::MmgConfig,
) -> Result<MatchResult, PipelineError> {
    let graph = mmg::build_match_graph(detections, features, &scene.cameras, cfg.score_decay)?;
    let targets = mmg::edge_targets(&graph, detections);
    mmg::resolve_clusters(&graph, &targets, 0.5, &scene.cameras)
}

/// Run one variant on one scene. Every random draw derives from `seed`.
pub fn infer_frame(
    scene: &Scene,
    seed: u64,
    cfg: &PipelineConfig,
    variant: &Variant,
    models: &Models,
) -> Result<FrameOutput, PipelineError> {
    models.check(variant)?;
    let detections = render_detections(scene, seed, false);
    let oracle = FeatureOracle::new(scene, seed, cfg.oracle)?;
    let matches = match variant.matching {
        Matching::Epipolar => mmg::match_epipolar(&detections, &oracle, &scene.cameras, &cfg.mmg)?,
        Matching::Mmg => mmg::match_views(need(&models.mmg, "mmg")?, &detections, &oracle, &scene.cameras, &cfg.mmg)?,
        Matching::Gt => match_ground_truth(&detections, &oracle, scene, &cfg.mmg)?,
    };
    let coarse = matches.coarse_centers();
    let views = scene.num_views() as f64;
    let centers = match variant.centers {
        Centers::Triangulation => {
            let proposals = matches
                .clusters
                .iter()
                .filter_map(|c| c.center.map(|p| (p, c.members.len() as f64 / views)))
                .filter(|(p, _)| scene.bounds.contains(&Vector3::from(*p)))
                .map(|(center, confidence)| RefinedCenter { center, confidence })
                .collect();
            RefinedCenters {
                centers: crg::dedupe(proposals, cfg.crg.dedupe_radius_mm),
                query_count: 0,
                traces: Vec::new(),
            }
        }
        Centers::Crg | Centers::MlpBaseline => {
            let (kind, model) = if variant.centers == Centers::Crg {
                (ScorerKind::Graph, need(&models.crg, "crg")?)
            } else {
                (ScorerKind::MlpBaseline, need(&models.mlp, "mlp-baseline")?)
            };
            let scorer = Scorer {
                kind,
                model,
                cameras: &scene.cameras,
                features: &oracle,
                bounds: scene.bounds,
                confidence_channel: cfg.crg.confidence_channel,
            };
            let mut out = crg::detect_from_proposals(&scorer, &coarse, &cfg.crg, &scene.bounds)?;
            out.traces.clear();
            out
        }
    };

    let truth = scene.centers();
    let rest = Skeleton::rest_pose();
    let mut persons = Vec::with_capacity(centers.centers.len());
    for (i, rc) in centers.centers.iter().enumerate() {
        let c = Vector3::from(rc.center);
        let nearest = truth
            .iter()
            .enumerate()
            .map(|(p, t)| (p, (t - c).norm()))
            .filter(|&(_, d)| d <= cfg.eval.associate_radius_mm)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let init: Vec<Vector3<f64>> = match nearest {
            Some((p, _)) => {
                let shift = c - truth[p];
                initial_pose(scene, p, mix_seed(seed, &[TAG_FRAME, i as u64]))?
                    .into_iter()
                    .map(|j| j + shift)
                    .collect()
            }
            None => {
                let shift = c - rest.joints[CENTER_JOINT];
                rest.joints.iter().map(|j| j + shift).collect()
            }
        };
        let (joints, joint_confidences) = if variant.prg {
            let r = prg::refine_pose(need(&models.prg, "prg")?, &init, &scene.cameras, &oracle, &rest.bones, &scene.bounds, &cfg.prg)?;
            (r.joints, r.joint_confidences)
        } else {
            (init.iter().map(|j| (*j).into()).collect(), Vec::new())
        };
        persons.push(PersonEstimate {
            center: rc.center,
            score: rc.confidence,
            joints,
            joint_confidences,
        });
    }
    Ok(FrameOutput {
        matches,
        coarse_centers: coarse.iter().map(|c| (*c).into()).collect(),
        centers,
        persons,
        detections,
    })
}
