//! One flat TOML configuration covering every stage.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crg::{CrgConfig, CrgSampling};
use crate::mmg::MmgConfig;
use crate::prg::{PrgConfig, PrgSampling};
use crate::synth::{NoiseConfig, OracleConfig, SceneSpec};
use crate::train::TrainConfig;
use crate::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Matching {
    Epipolar,
    Mmg,
    Gt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Centers {
    Triangulation,
    MlpBaseline,
    Crg,
}

impl FromStr for Matching {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "epipolar" => Ok(Self::Epipolar),
            "mmg" => Ok(Self::Mmg),
            "gt" => Ok(Self::Gt),
            _ => Err(PipelineError::Config(format!("unknown matching variant {s:?}"))),
        }
    }
}

impl FromStr for Centers {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "triangulation" => Ok(Self::Triangulation),
            "mlp-baseline" => Ok(Self::MlpBaseline),
            "crg" => Ok(Self::Crg),
            _ => Err(PipelineError::Config(format!("unknown centre variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Variant {
    pub matching: Matching,
    pub centers: Centers,
    pub prg: bool,
}

impl Default for Variant {
    fn default() -> Self {
        Self {
            matching: Matching::Mmg,
            centers: Centers::Crg,
            prg: true,
        }
    }
}

impl Variant {
    pub fn label(&self) -> String {
        let m = match self.matching {
            Matching::Epipolar => "epipolar",
            Matching::Mmg => "mmg",
            Matching::Gt => "gt",
        };
        let c = match self.centers {
            Centers::Triangulation => "triangulation",
            Centers::MlpBaseline => "mlp-baseline",
            Centers::Crg => "crg",
        };
        format!("{m}+{c}{}", if self.prg { "+prg" } else { "" })
    }

    /// Parse `matching+centers[+prg]`.
    pub fn parse(label: &str) -> Result<Self, PipelineError> {
        let parts: Vec<&str> = label.split('+').collect();
        let (m, c, prg) = match parts.as_slice() {
            [m, c] => (m, c, false),
            [m, c, "prg"] => (m, c, true),
            _ => return Err(PipelineError::Config(format!("unknown variant {label:?}"))),
        };
        Ok(Self {
            matching: m.parse()?,
            centers: c.parse()?,
            prg,
        })
    }

    /// Every combination of the three selectors.
    pub fn matrix() -> Vec<Variant> {
        let mut out = Vec::new();
        for matching in [Matching::Epipolar, Matching::Mmg, Matching::Gt] {
            for centers in [Centers::Triangulation, Centers::MlpBaseline, Centers::Crg] {
                for prg in [false, true] {
                    out.push(Variant { matching, centers, prg });
                }
            }
        }
        out
    }
}

/// Scene sets for training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub train_scenes: usize,
    pub train_seed: u64,
    /// Training scenes cycle through 1..=max persons.
    pub train_max_persons: usize,
    pub eval_scenes: usize,
    pub eval_seed: u64,
    pub eval_persons: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_scenes: 1000,
            train_seed: 1000,
            train_max_persons: 4,
            eval_scenes: 100,
            eval_seed: 1_000_000,
            eval_persons: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub mmg: TrainConfig,
    pub crg: TrainConfig,
    pub prg: TrainConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let base = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        Self {
            mmg: TrainConfig { epochs: 2, lr: 1e-4, ..base },
            crg: TrainConfig { epochs: 4, lr: 1e-4, ..base },
            prg: TrainConfig { epochs: 4, lr: 5e-5, ..base },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// PCP3D tolerance as a fraction of bone length.
    pub pcp_alpha: f64,
    /// A detected centre stands for the nearest true person within this
    /// distance when its initial pose is drawn.
    pub associate_radius_mm: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            pcp_alpha: crate::eval::PCP_ALPHA,
            associate_radius_mm: 500.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: String,
    pub scene: SceneSpec,
    pub oracle: OracleConfig,
    pub data: DataConfig,
    pub mmg: MmgConfig,
    pub crg: CrgConfig,
    pub crg_sampling: CrgSampling,
    pub prg: PrgConfig,
    pub prg_sampling: PrgSampling,
    pub training: TrainingConfig,
    pub variant: Variant,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: "out".into(),
            scene: SceneSpec {
                noise: NoiseConfig {
                    detection_noise_px: 8.0,
                    ..NoiseConfig::default()
                },
                ..SceneSpec::default()
            },
            oracle: OracleConfig::default(),
            data: DataConfig::default(),
            mmg: MmgConfig::default(),
            crg: CrgConfig::default(),
            crg_sampling: CrgSampling::default(),
            prg: PrgConfig::default(),
            prg_sampling: PrgSampling::default(),
            training: TrainingConfig::default(),
            variant: Variant::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, PipelineError> {
        toml::to_string(self).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        Ok(std::fs::write(path, self.to_toml()?)?)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.scene.rig.validate()?;
        self.scene.noise.validate()?;
        self.oracle.validate()?;
        self.crg.schedule.validate()?;
        if self.data.train_max_persons == 0 {
            return Err(PipelineError::Config("train_max_persons must be positive".into()));
        }
        if self.prg_sampling.sigmas_mm.is_empty() {
            return Err(PipelineError::Config("no initial-pose noise levels".into()));
        }
        if !(self.eval.pcp_alpha > 0.0) || !(self.eval.associate_radius_mm > 0.0) {
            return Err(PipelineError::Config("eval tolerances must be positive".into()));
        }
        for t in [&self.training.mmg, &self.training.crg, &self.training.prg] {
            if !(t.lr > 0.0) || t.batch_size == 0 {
                return Err(PipelineError::Config("learning rate and batch size must be positive".into()));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 prefix of the serialized configuration.
    pub fn fingerprint(&self) -> Result<String, PipelineError> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest[..8].iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_the_published_constants() {
        let c = PipelineConfig::default();
        assert_eq!(c.mmg.score_decay, 10.0);
        let s = c.crg.schedule;
        assert_eq!((s.r0, s.tau0, s.gamma, s.gamma_prime, s.epsilon), (300.0, 200.0, 0.6, 0.25, 50.0));
        assert_eq!(c.crg_sampling.sigma_target, 200.0);
        assert_eq!(c.crg_sampling.sigma_pos, 400.0);
        assert_eq!(c.crg_sampling.positive_ratio, 4);
        let t = c.training;
        assert_eq!((t.mmg.lr, t.crg.lr, t.prg.lr), (1e-4, 1e-4, 5e-5));
        assert_eq!((t.mmg.epochs, t.crg.epochs, t.prg.epochs), (2, 4, 4));
        assert_eq!(c.scene.noise.center_jitter_px, 25.0);
    }

    #[test]
    fn toml_round_trip() {
        let c = PipelineConfig::default();
        let text = c.to_toml().unwrap();
        let back = PipelineConfig::from_toml(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml().unwrap(), text);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = PipelineConfig::from_toml("seed = 7\n[variant]\nmatching = \"epipolar\"\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.variant.matching, Matching::Epipolar);
        assert_eq!(c.crg, CrgConfig::default());
    }

    #[test]
    fn unknown_variant_is_a_config_error() {
        let e = PipelineConfig::from_toml("[variant]\nmatching = \"magic\"\n").unwrap_err();
        assert!(matches!(e, PipelineError::Config(_)));
        assert!(matches!(Variant::parse("mmg+voxels"), Err(PipelineError::Config(_))));
    }

    #[test]
    fn variant_labels_parse_back() {
        let all = Variant::matrix();
        assert_eq!(all.len(), 18);
        for v in all {
            assert_eq!(Variant::parse(&v.label()).unwrap(), v);
        }
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = PipelineConfig::default();
        let b = PipelineConfig { seed: 1, ..a.clone() };
        assert_eq!(a.fingerprint().unwrap(), a.fingerprint().unwrap());
        assert_ne!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
    }
}
