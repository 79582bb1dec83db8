//! `mvpose` command-line entry point.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;
use serde::Serialize;

use mvpose::config::Variant;
use mvpose::crg::{grid_query_count, refine_center};
use mvpose::eval::{
    evaluate, evaluation_scenes, infer_frame, train_module, training_scenes, EvalReport, Models, Module,
};
use mvpose::synth::{generate_scene, SceneFile};
use mvpose::{Model, PipelineConfig, PipelineError};

#[derive(Parser, Debug)]
#[command(name = "mvpose", version, about = "Multi-view multi-person 3D pose estimation on synthetic rigs")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration; defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root (overrides the config's output_dir).
    #[arg(long, global = true, env = "MVPOSE_OUT")]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of cameras in generated scenes.
    #[arg(long, global = true)]
    views: Option<usize>,
    #[arg(long, global = true)]
    train_scenes: Option<usize>,
    #[arg(long, global = true)]
    eval_scenes: Option<usize>,
    /// Persons per evaluation scene.
    #[arg(long, global = true)]
    persons: Option<usize>,
    /// Variant `matching+centers[+prg]`, e.g. `mmg+crg+prg`.
    #[arg(long, global = true)]
    variant: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write scene files.
    GenScenes {
        /// Which scene set to write: train or eval.
        #[arg(long, default_value = "eval")]
        set: String,
    },
    /// Train modules and write weight and history files.
    Train {
        /// mmg, crg, mlp-baseline, prg or all.
        #[arg(long, default_value = "all")]
        module: String,
    },
    /// Run the configured variant and write per-frame pose records.
    Infer {
        /// Directory with weight files (default: <out>/weights).
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Evaluate one or more variants and write reports.
    Eval {
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Comma-separated variants, or `all` for the full matrix.
        #[arg(long)]
        variants: Option<String>,
    },
    /// Compare full-grid and coarse-to-fine query counts.
    BenchQueries {
        /// Persons in the benchmark scene.
        #[arg(long, default_value_t = 4)]
        bench_persons: usize,
    },
    /// Print the effective configuration as TOML.
    Config,
}

fn config_error(e: impl std::fmt::Display) -> anyhow::Error {
    PipelineError::Config(e.to_string()).into()
}

fn load_config(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &c.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| config_error(format!("{}: {e}", p.display())))?;
            PipelineConfig::from_toml(&text)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(o) = &c.out {
        cfg.output_dir = o.display().to_string();
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(v) = c.views {
        cfg.scene.rig.views = v;
    }
    if let Some(n) = c.train_scenes {
        cfg.data.train_scenes = n;
    }
    if let Some(n) = c.eval_scenes {
        cfg.data.eval_scenes = n;
    }
    if let Some(n) = c.persons {
        cfg.data.eval_persons = n;
    }
    if let Some(v) = &c.variant {
        cfg.variant = Variant::parse(v)?;
    }
    cfg.validate().map_err(config_error)?;
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| path.display().to_string())
}

fn modules(name: &str) -> Result<Vec<Module>> {
    if name == "all" {
        Ok(Module::ALL.to_vec())
    } else {
        Ok(vec![name.parse::<Module>()?])
    }
}

fn cmd_gen_scenes(cfg: &PipelineConfig, set: &str) -> Result<()> {
    let (scenes, base) = match set {
        "train" => (training_scenes(cfg)?, cfg.data.train_seed),
        "eval" => (evaluation_scenes(cfg)?, cfg.data.eval_seed),
        other => return Err(config_error(format!("unknown scene set {other:?}"))),
    };
    let dir = Path::new(&cfg.output_dir).join("scenes").join(set);
    fs::create_dir_all(&dir)?;
    for (i, s) in scenes.iter().enumerate() {
        SceneFile::from_scene(s, Some(base + i as u64)).save(&dir.join(format!("scene_{i:05}.json")))?;
    }
    println!("wrote {} {set} scenes to {}", scenes.len(), dir.display());
    Ok(())
}

fn cmd_train(cfg: &PipelineConfig, module: &str) -> Result<()> {
    let scenes = training_scenes(cfg)?;
    let dir = Path::new(&cfg.output_dir).join("weights");
    fs::create_dir_all(&dir)?;
    for m in modules(module)? {
        let (model, history) = train_module(cfg, m, &scenes)?;
        model
            .save(&dir.join(format!("{}.json", m.name())), m.name())
            .map_err(PipelineError::from)?;
        write_json(&dir.join(format!("{}.history.json", m.name())), &history)?;
        let last = history.epochs.last().map_or(f64::NAN, |e| e.loss);
        println!("{:<13} {} epochs, final loss {last:.6}", m.name(), history.epochs.len());
    }
    Ok(())
}

fn load_models(cfg: &PipelineConfig, weights: Option<&PathBuf>) -> Result<Models> {
    let dir = weights.cloned().unwrap_or_else(|| Path::new(&cfg.output_dir).join("weights"));
    let load = |m: Module| -> Result<Option<Model>> {
        let path = dir.join(format!("{}.json", m.name()));
        if !path.exists() {
            return Ok(None);
        }
        let (model, arch) = Model::load(&path).map_err(PipelineError::from)?;
        if arch != m.name() {
            bail!(PipelineError::Contract(format!("{} holds {arch} weights", path.display())));
        }
        Ok(Some(model))
    };
    Ok(Models {
        mmg: load(Module::Mmg)?,
        crg: load(Module::Crg)?,
        mlp: load(Module::MlpBaseline)?,
        prg: load(Module::Prg)?,
    })
}

#[derive(Serialize)]
struct PersonRecord<'a> {
    id: usize,
    center: [f64; 3],
    score: f64,
    joints: &'a [[f64; 3]],
    joint_confidences: &'a [f64],
}

#[derive(Serialize)]
struct FrameRecord<'a> {
    frame: usize,
    variant: String,
    query_count: usize,
    persons: Vec<PersonRecord<'a>>,
}

fn cmd_infer(cfg: &PipelineConfig, weights: Option<&PathBuf>) -> Result<()> {
    let models = load_models(cfg, weights)?;
    models.check(&cfg.variant).map_err(config_error)?;
    let dir = Path::new(&cfg.output_dir).join("infer");
    fs::create_dir_all(&dir)?;
    let scenes = evaluation_scenes(cfg)?;
    for (i, scene) in scenes.iter().enumerate() {
        let seed = mvpose::synth::mix_seed(cfg.seed, &[0x494e46, i as u64]);
        let out = infer_frame(scene, seed, cfg, &cfg.variant, &models)?;
        let record = FrameRecord {
            frame: i,
            variant: cfg.variant.label(),
            query_count: out.centers.query_count,
            persons: out
                .persons
                .iter()
                .enumerate()
                .map(|(id, p)| PersonRecord {
                    id,
                    center: p.center,
                    score: p.score,
                    joints: &p.joints,
                    joint_confidences: &p.joint_confidences,
                })
                .collect(),
        };
        write_json(&dir.join(format!("frame_{i:05}.json")), &record)?;
    }
    println!("wrote {} frame records to {}", scenes.len(), dir.display());
    Ok(())
}

fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    let stem = format!("{}_v{}", report.variant.replace('+', "_"), report.views);
    fs::write(dir.join(format!("{stem}.json")), report.to_json()?)?;
    fs::write(dir.join(format!("{stem}.txt")), report.summary())?;
    let mut w = csv::Writer::from_path(dir.join(format!("{stem}_pr.csv")))?;
    w.write_record(["threshold_mm", "rank", "precision", "recall"])?;
    for c in &report.pr_curves {
        for (i, (p, r)) in c.precision.iter().zip(&c.recall).enumerate() {
            w.write_record([c.threshold_mm.to_string(), (i + 1).to_string(), p.to_string(), r.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_eval(cfg: &PipelineConfig, weights: Option<&PathBuf>, variants: Option<&str>) -> Result<()> {
    let models = load_models(cfg, weights)?;
    let list: Vec<Variant> = match variants {
        None => vec![cfg.variant],
        Some("all") => Variant::matrix().into_iter().filter(|v| models.check(v).is_ok()).collect(),
        Some(s) => s.split(',').map(|v| Variant::parse(v.trim())).collect::<Result<_, _>>()?,
    };
    for v in &list {
        models.check(v).map_err(config_error)?;
    }
    let scenes = evaluation_scenes(cfg)?;
    let dir = Path::new(&cfg.output_dir).join("eval");
    for v in &list {
        let report = evaluate(cfg, v, &models, &scenes)?;
        write_report(&dir, &report)?;
        print!("{}", report.summary());
    }
    Ok(())
}

fn cmd_bench(cfg: &PipelineConfig, persons: usize) -> Result<()> {
    let pitch = cfg.crg.schedule.epsilon;
    let zero = |pts: &[Vector3<f64>]| -> Result<Vec<f64>, PipelineError> { Ok(vec![0.0; pts.len()]) };
    let mut w = csv::Writer::from_path({
        fs::create_dir_all(&cfg.output_dir)?;
        Path::new(&cfg.output_dir).join("bench_queries.csv")
    })?;
    w.write_record(["persons", "bounds_scale", "grid_queries", "crg_queries", "ratio"])?;
    println!("{:>8} {:>6} {:>12} {:>12} {:>10}", "persons", "scale", "grid", "crg", "ratio");
    for n in 1..=persons {
        let scene = generate_scene(cfg.data.eval_seed, n, &cfg.scene)?;
        for scale in [1.0, 2.0] {
            let bounds = scene.bounds.scaled(scale);
            let mut crg = 0;
            for c in scene.centers() {
                crg += refine_center(&zero, &c, &cfg.crg.schedule, &bounds)?.queries;
            }
            let grid = grid_query_count(&bounds, pitch);
            let ratio = grid as f64 / crg.max(1) as f64;
            println!("{n:>8} {scale:>6} {grid:>12} {crg:>12} {ratio:>10.1}");
            w.write_record([n.to_string(), scale.to_string(), grid.to_string(), crg.to_string(), format!("{ratio:.3}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::GenScenes { set } => cmd_gen_scenes(&cfg, &set),
        Command::Train { module } => cmd_train(&cfg, &module),
        Command::Infer { weights } => cmd_infer(&cfg, weights.as_ref()),
        Command::Eval { weights, variants } => cmd_eval(&cfg, weights.as_ref(), variants.as_deref()),
        Command::BenchQueries { bench_persons } => cmd_bench(&cfg, bench_persons),
        Command::Config => {
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<PipelineError>() {
        Some(p) if p.is_divergence() => 3,
        Some(PipelineError::Config(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
