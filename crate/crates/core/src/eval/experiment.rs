//! Scene sets, module training and the evaluation report.

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::metrics::{
    matching_pairs, pcp3d, score_centers, score_poses, Frame, MatchingScores, PairCounts, PrCurve,
    THRESHOLDS_MM,
};
use super::pipeline::{infer_frame, FrameOutput, Models};
use crate::config::{PipelineConfig, Variant};
use crate::crg::{self, grid_query_count, ScorerKind};
use crate::mmg;
use crate::nn::Init;
use crate::Model;
use crate::prg;
use crate::synth::{generate_scene, mix_seed, stream_rng, Scene};
use crate::train::{History, TrainConfig};
use crate::PipelineError;

const TAG_INIT: u64 = 0x494e4954;
const TAG_TRAIN: u64 = 0x5452;
const TAG_EVAL: u64 = 0x4556;

/// Trainable modules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Module {
    Mmg,
    Crg,
    MlpBaseline,
    Prg,
}

impl Module {
    pub const ALL: [Module; 4] = [Module::Mmg, Module::Crg, Module::MlpBaseline, Module::Prg];

    pub fn name(&self) -> &'static str {
        match self {
            Module::Mmg => "mmg",
            Module::Crg => "crg",
            Module::MlpBaseline => "mlp-baseline",
            Module::Prg => "prg",
        }
    }

    fn index(&self) -> u64 {
        Module::ALL.iter().position(|m| m == self).unwrap_or(0) as u64
    }
}

impl FromStr for Module {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Module::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| PipelineError::Config(format!("unknown module {s:?}")))
    }
}

/// Training scenes; person counts cycle through `1..=train_max_persons`.
pub fn training_scenes(cfg: &PipelineConfig) -> Result<Vec<Scene>, PipelineError> {
    let d = &cfg.data;
    (0..d.train_scenes)
        .map(|i| {
            generate_scene(d.train_seed + i as u64, 1 + i % d.train_max_persons, &cfg.scene)
                .map_err(Into::into)
        })
        .collect()
}

pub fn evaluation_scenes(cfg: &PipelineConfig) -> Result<Vec<Scene>, PipelineError> {
    let d = &cfg.data;
    (0..d.eval_scenes)
        .map(|i| generate_scene(d.eval_seed + i as u64, d.eval_persons, &cfg.scene).map_err(Into::into))
        .collect()
}

/// Freshly initialised weights for `module`.
pub fn init_model(cfg: &PipelineConfig, module: Module) -> Result<Model, PipelineError> {
    let mut rng = stream_rng(cfg.seed, &[TAG_INIT, module.index()]);
    let c = cfg.oracle.channels;
    let init = Init::Random(&mut rng);
    Ok(match module {
        Module::Mmg => mmg::build_model(c, &cfg.mmg, init)?,
        Module::Crg => crg::build_model(c, &cfg.crg, init)?,
        Module::MlpBaseline => crg::build_mlp_baseline(c, cfg.scene.rig.views, &cfg.crg, init)?,
        Module::Prg => prg::build_model(c, crate::synth::JOINT_NAMES.len(), &cfg.prg, init)?,
    })
}

fn train_config(cfg: &PipelineConfig, module: Module) -> TrainConfig {
    let base = match module {
        Module::Mmg => cfg.training.mmg,
        Module::Crg | Module::MlpBaseline => cfg.training.crg,
        Module::Prg => cfg.training.prg,
    };
    TrainConfig {
        seed: mix_seed(cfg.seed, &[TAG_TRAIN, module.index(), base.seed]),
        ..base
    }
}

/// Initialise and train one module on `scenes`.
pub fn train_module(
    cfg: &PipelineConfig,
    module: Module,
    scenes: &[Scene],
) -> Result<(Model, History), PipelineError> {
    let mut model = init_model(cfg, module)?;
    let tc = train_config(cfg, module);
    let history = match module {
        Module::Mmg => mmg::train_mmg(&mut model, scenes, &cfg.oracle, &cfg.mmg, &tc)?,
        Module::Crg => crg::train_crg(&mut model, ScorerKind::Graph, scenes, &cfg.oracle, &cfg.crg, &cfg.crg_sampling, &tc)?,
        Module::MlpBaseline => {
            crg::train_crg(&mut model, ScorerKind::MlpBaseline, scenes, &cfg.oracle, &cfg.crg, &cfg.crg_sampling, &tc)?
        }
        Module::Prg => prg::train_prg(&mut model, scenes, &cfg.oracle, &cfg.prg, &cfg.prg_sampling, &tc)?,
    };
    Ok((model, history))
}

/// Train every module the variant needs.
pub fn train_for(cfg: &PipelineConfig, variant: &Variant, scenes: &[Scene]) -> Result<Models, PipelineError> {
    use crate::config::{Centers, Matching};
    let mut models = Models::default();
    if variant.matching == Matching::Mmg {
        models.mmg = Some(train_module(cfg, Module::Mmg, scenes)?.0);
    }
    match variant.centers {
        Centers::Crg => models.crg = Some(train_module(cfg, Module::Crg, scenes)?.0),
        Centers::MlpBaseline => models.mlp = Some(train_module(cfg, Module::MlpBaseline, scenes)?.0),
        Centers::Triangulation => {}
    }
    if variant.prg {
        models.prg = Some(train_module(cfg, Module::Prg, scenes)?.0);
    }
    Ok(models)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Pcp3d {
    pub per_actor: Vec<f64>,
    pub average: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryStats {
    pub frames: usize,
    pub total: usize,
    pub per_frame: f64,
    /// Lattice points of a full scan of the bounds at the final pitch.
    pub grid_per_frame: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub views: usize,
    pub scenes: usize,
    pub seed: u64,
    pub fingerprint: String,
    pub thresholds_mm: Vec<f64>,
    pub ap: Vec<f64>,
    pub ar: Vec<f64>,
    pub map: f64,
    pub mar: f64,
    /// Mean MPJPE over true positives at the loosest threshold.
    pub mpjpe_mm: Option<f64>,
    pub pcp3d: Pcp3d,
    pub matching: MatchingScores,
    pub center_ap: Vec<f64>,
    pub center_map: f64,
    /// Mean distance of centres matched within the association radius.
    pub center_error_mm: Option<f64>,
    pub queries: QueryStats,
    pub pr_curves: Vec<PrCurve>,
}

/// Evaluate one variant on `scenes` with fixed models.
pub fn evaluate(
    cfg: &PipelineConfig,
    variant: &Variant,
    models: &Models,
    scenes: &[Scene],
) -> Result<EvalReport, PipelineError> {
    let outputs = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| infer_frame(s, mix_seed(cfg.seed, &[TAG_EVAL, i as u64]), cfg, variant, models))
        .collect::<Result<Vec<_>, _>>()?;
    report(cfg, variant, scenes, &outputs)
}

/// Assemble metrics from per-frame outputs, in scene order.
pub fn report(
    cfg: &PipelineConfig,
    variant: &Variant,
    scenes: &[Scene],
    outputs: &[FrameOutput],
) -> Result<EvalReport, PipelineError> {
    if scenes.len() != outputs.len() {
        return Err(PipelineError::Contract("one output per scene required".into()));
    }
    let mut pose_frames = Vec::with_capacity(scenes.len());
    let mut center_frames = Vec::with_capacity(scenes.len());
    let mut pairs = PairCounts::default();
    let mut actors: Vec<(f64, usize)> = Vec::new();
    let mut queries = 0;
    for (scene, out) in scenes.iter().zip(outputs) {
        let truth: Vec<Vec<Vector3<f64>>> = scene.persons.iter().map(|p| p.joints.clone()).collect();
        let preds: Vec<Vec<Vector3<f64>>> = out
            .persons
            .iter()
            .map(|p| p.joints.iter().map(|j| Vector3::from(*j)).collect())
            .collect();
        pose_frames.push(Frame {
            predictions: preds.iter().cloned().zip(out.persons.iter().map(|p| p.score)).collect(),
            ground_truth: truth.clone(),
        });
        center_frames.push(Frame {
            predictions: out.persons.iter().map(|p| (Vector3::from(p.center), p.score)).collect(),
            ground_truth: scene.centers(),
        });
        pairs.add(matching_pairs(&out.matches.clusters, &out.detections));
        queries += out.centers.query_count;
        for (a, (gt, person)) in truth.iter().zip(&scene.persons).enumerate() {
            let mut best: Option<(f64, &Vec<Vector3<f64>>)> = None;
            for p in &preds {
                let e = super::metrics::mpjpe(p, gt)?;
                if best.is_none_or(|(b, _)| e < b) {
                    best = Some((e, p));
                }
            }
            let pcp = match best {
                Some((_, p)) => pcp3d(p, gt, &person.bones, cfg.eval.pcp_alpha)?,
                None => 0.0,
            };
            if actors.len() <= a {
                actors.resize(a + 1, (0.0, 0));
            }
            actors[a].0 += pcp;
            actors[a].1 += 1;
        }
    }
    let mut ap = Vec::new();
    let mut ar = Vec::new();
    let mut curves = Vec::new();
    let mut mpjpe_mm = None;
    for &t in &THRESHOLDS_MM {
        let s = score_poses(&pose_frames, t)?;
        ap.push(s.ap);
        ar.push(s.ar);
        mpjpe_mm = s.matched_error;
        curves.push(s.curve);
    }
    let center_ap: Vec<f64> = THRESHOLDS_MM
        .iter()
        .map(|&t| score_centers(&center_frames, t).map(|s| s.ap))
        .collect::<Result<_, _>>()?;
    let center_error_mm = score_centers(&center_frames, cfg.eval.associate_radius_mm)?.matched_error;
    let per_actor: Vec<f64> = actors.iter().map(|&(s, n)| s / n as f64).collect();
    let average = if per_actor.is_empty() {
        0.0
    } else {
        per_actor.iter().sum::<f64>() / per_actor.len() as f64
    };
    let frames = scenes.len();
    let n = THRESHOLDS_MM.len() as f64;
    Ok(EvalReport {
        variant: variant.label(),
        views: scenes.first().map_or(cfg.scene.rig.views, Scene::num_views),
        scenes: frames,
        seed: cfg.seed,
        fingerprint: cfg.fingerprint()?,
        thresholds_mm: THRESHOLDS_MM.to_vec(),
        map: ap.iter().sum::<f64>() / n,
        mar: ar.iter().sum::<f64>() / n,
        ap,
        ar,
        mpjpe_mm,
        pcp3d: Pcp3d { per_actor, average },
        matching: pairs.scores(),
        center_map: center_ap.iter().sum::<f64>() / n,
        center_ap,
        center_error_mm,
        queries: QueryStats {
            frames,
            total: queries,
            per_frame: if frames == 0 { 0.0 } else { queries as f64 / frames as f64 },
            grid_per_frame: grid_query_count(&cfg.scene.bounds, cfg.crg.schedule.epsilon),
        },
        pr_curves: curves,
    })
}

/// Generate the configured evaluation scenes and evaluate the configured
/// variant.
pub fn run_experiment(cfg: &PipelineConfig, models: &Models) -> Result<EvalReport, PipelineError> {
    cfg.validate()?;
    evaluate(cfg, &cfg.variant, models, &evaluation_scenes(cfg)?)
}

/// The configured variant on the first `n` cameras of each evaluation
/// scene, for each `n` in `views`.
pub fn run_view_sweep(
    cfg: &PipelineConfig,
    models: &Models,
    views: &[usize],
) -> Result<Vec<EvalReport>, PipelineError> {
    cfg.validate()?;
    let scenes = evaluation_scenes(cfg)?;
    views
        .iter()
        .map(|&n| {
            let subset: Vec<usize> = (0..n).collect();
            let cut = scenes
                .iter()
                .map(|s| s.with_views(&subset))
                .collect::<Result<Vec<_>, _>>()?;
            evaluate(cfg, &cfg.variant, models, &cut)
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.2}"))
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String, PipelineError> {
        serde_json::to_string_pretty(self).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Aligned-column text summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "variant   {}  views {}  scenes {}  seed {}  config {}", self.variant, self.views, self.scenes, self.seed, self.fingerprint);
        let _ = writeln!(s, "{:>10} {:>8} {:>8} {:>10}", "thresh_mm", "AP", "AR", "centre_AP");
        for i in 0..self.thresholds_mm.len() {
            let _ = writeln!(
                s,
                "{:>10.0} {:>8.4} {:>8.4} {:>10.4}",
                self.thresholds_mm[i], self.ap[i], self.ar[i], self.center_ap[i]
            );
        }
        let _ = writeln!(s, "{:>10} {:>8.4} {:>8.4} {:>10.4}", "mean", self.map, self.mar, self.center_map);
        let _ = writeln!(s, "MPJPE mm        {}", opt(self.mpjpe_mm));
        let _ = writeln!(s, "centre error mm {}", opt(self.center_error_mm));
        let _ = writeln!(s, "PCP3D           {:.4}", self.pcp3d.average);
        let m = &self.matching;
        let _ = writeln!(s, "matching P/R/F1 {:.4} {:.4} {:.4}", m.precision, m.recall, m.f1);
        let q = &self.queries;
        let _ = writeln!(s, "queries/frame   {:.1} (grid {})", q.per_frame, q.grid_per_frame);
        s
    }
}
