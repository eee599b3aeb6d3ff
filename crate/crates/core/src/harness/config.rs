use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::bias::{BiasConfig, BiasSetting};
use crate::downstream::{DownstreamConfig, TaskSpec};
use crate::latent::{GeneratorConfig, LatentSpec};
use crate::mmcl::{EncoderConfig, TrainConfig};
use crate::numerics::Init;
use crate::probe::ProbeConfig;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stages {
    pub generate: bool,
    pub train: bool,
    pub probe: bool,
    pub downstream: bool,
    pub oracle: bool,
}

impl Stages {
    pub const ALL: Stages = Stages {
        generate: true,
        train: true,
        probe: true,
        downstream: true,
        oracle: true,
    };
    pub const NONE: Stages = Stages {
        generate: false,
        train: false,
        probe: false,
        downstream: false,
        oracle: false,
    };
}

impl Default for Stages {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(HarnessError::InvalidConfig(format!("unknown profile '{other}'"))),
        }
    }
}

/// Encoder shape shared by both modalities. The embedding width defaults to
/// the number of unbiased semantics; setting `output_dim` overrides it
/// (ablations with a deliberately wrong width).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSettings {
    pub hidden_width: usize,
    pub n_layers: usize,
    #[serde(default)]
    pub bounded_output: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dim: Option<usize>,
    #[serde(default)]
    pub init: Init,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        Self {
            hidden_width: 64,
            n_layers: 7,
            bounded_output: false,
            output_dim: None,
            init: Init::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSettings {
    pub n: usize,
    pub alpha: f64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self { n: 10_000, alpha: 0.01 }
    }
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// One experiment: a bias setting evaluated over several seeds.
///
/// The `seed` fields inside `train`, `probe` and `downstream` are ignored;
/// the harness derives every stage seed from the entries of `seeds`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub setting_id: String,
    pub latent: LatentSpec,
    pub bias: BiasConfig,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub encoder: EncoderSettings,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub downstream: DownstreamConfig,
    /// Task names from the standard set (`y1`…`y4`, `y2_class`).
    pub tasks: Vec<String>,
    #[serde(default)]
    pub oracle: OracleSettings,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub stages: Stages,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

/// Adam step size of the desk preset.
pub const DESK_LR: f64 = 1e-3;

impl ExperimentConfig {
    /// Desk- or paper-scale defaults for `bias`.
    pub fn preset(profile: Profile, latent: LatentSpec, bias: BiasConfig) -> Self {
        // At 10k steps the plain defaults barely move the 7-layer encoders;
        // He init with a larger step size reaches the supervised ceiling.
        let train = match profile {
            Profile::Desk => TrainConfig {
                lr: DESK_LR,
                ..TrainConfig::default()
            },
            Profile::Paper => TrainConfig {
                batch_size: 6144,
                steps: 100_000,
                ..TrainConfig::default()
            },
        };
        let probe = ProbeConfig {
            split: match profile {
                Profile::Desk => crate::probe::EvalSplit::Half,
                Profile::Paper => crate::probe::EvalSplit::TwoSets,
            },
            ..ProbeConfig::default()
        };
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            setting_id: "run".into(),
            latent,
            bias,
            generator: GeneratorConfig::default(),
            encoder: EncoderSettings {
                init: match profile {
                    Profile::Desk => Init::He,
                    Profile::Paper => Init::FanInUniform,
                },
                ..EncoderSettings::default()
            },
            train,
            probe,
            downstream: DownstreamConfig::default(),
            tasks: TaskSpec::standard().into_iter().map(|t| t.name).collect(),
            oracle: OracleSettings::default(),
            seeds: vec![0, 1, 2],
            output_dir: PathBuf::from("runs"),
            stages: Stages::ALL,
            jobs: default_jobs(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self, HarnessError> {
        let v: Value = serde_json::from_str(s)?;
        let version = v.get("schema_version").and_then(Value::as_u64);
        if version != Some(CONFIG_SCHEMA_VERSION as u64) {
            return Err(HarnessError::UnsupportedSchema(version));
        }
        let cfg: Self = serde_json::from_value(v)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String, HarnessError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn resolve_bias(&self) -> Result<BiasSetting, HarnessError> {
        Ok(self.bias.resolve(self.latent.n_s)?)
    }

    pub fn task_specs(&self) -> Result<Vec<TaskSpec>, HarnessError> {
        self.tasks
            .iter()
            .map(|t| TaskSpec::named(t).ok_or_else(|| HarnessError::InvalidConfig(format!("unknown task '{t}'"))))
            .collect()
    }

    /// Encoder configs for observation widths `x_dim`, `t_dim`.
    pub fn encoder_configs(&self, x_dim: usize, t_dim: usize) -> Result<(EncoderConfig, EncoderConfig), HarnessError> {
        let n = match self.encoder.output_dim {
            Some(n) => n,
            None => self.resolve_bias()?.identified_dim(),
        };
        let make = |input_dim| EncoderConfig {
            input_dim,
            hidden_width: self.encoder.hidden_width,
            n_layers: self.encoder.n_layers,
            output_dim: n,
            bounded_output: self.encoder.bounded_output,
            init: self.encoder.init,
        };
        Ok((make(x_dim), make(t_dim)))
    }

    /// Checks everything that can be checked before any compute.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidConfig(m));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(HarnessError::UnsupportedSchema(Some(self.schema_version as u64)));
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        let mut uniq = self.seeds.clone();
        uniq.sort_unstable();
        uniq.dedup();
        if uniq.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.setting_id.is_empty() || self.setting_id.contains(['/', '\\']) {
            return bad(format!("setting_id '{}' is not a valid directory name", self.setting_id));
        }
        self.latent.validate()?;
        self.resolve_bias()?;
        self.train.validate()?;
        if self.encoder.output_dim == Some(0) || self.encoder.hidden_width == 0 || self.encoder.n_layers == 0 {
            return bad(format!("invalid encoder settings {:?}", self.encoder));
        }
        self.task_specs()?;
        if self.probe.n_eval < 4 || self.downstream.n_train < 2 || self.downstream.n_test < 2 {
            return bad("evaluation sets are too small".into());
        }
        if self.oracle.n < crate::probe::MIN_KS_SAMPLES {
            return bad(format!(
                "oracle.n = {} is below the {} samples the uniformity test needs",
                self.oracle.n,
                crate::probe::MIN_KS_SAMPLES
            ));
        }
        if !(self.oracle.alpha > 0.0 && self.oracle.alpha < 1.0) {
            return bad(format!("oracle.alpha = {} must lie in (0, 1)", self.oracle.alpha));
        }
        if self.jobs == 0 {
            return bad("jobs must be at least 1".into());
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of every field that affects results.
    /// Output location, parallelism, stage flags, the run label and the
    /// ignored per-stage seed fields are left out.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let obj = v.as_object_mut().expect("object");
        for key in ["output_dir", "jobs", "stages", "setting_id"] {
            obj.remove(key);
        }
        for path in [
            &["train", "seed"][..],
            &["probe", "seed"],
            &["probe", "mlp", "seed"],
            &["downstream", "seed"],
            &["downstream", "head", "seed"],
        ] {
            let (last, parents) = path.split_last().unwrap();
            let mut node = &mut v;
            for p in parents {
                node = &mut node[*p];
            }
            if let Some(o) = node.as_object_mut() {
                o.remove(*last);
            }
        }
        // serde_json's default map is ordered, so this is canonical
        let canonical = serde_json::to_string(&v).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> ExperimentConfig {
        ExperimentConfig::preset(Profile::Desk, LatentSpec::independent(), BiasConfig::from_codes(56, 1))
    }

    #[test]
    fn presets_validate() {
        desk().validate().unwrap();
        let p = ExperimentConfig::preset(Profile::Paper, LatentSpec::dependent(), BiasConfig::unbiased(10));
        p.validate().unwrap();
        assert_eq!(p.train.batch_size, 6144);
        assert_eq!(p.train.steps, 100_000);
        assert_eq!(desk().train.batch_size, 256);
        assert_eq!(desk().encoder.init, Init::He);
        assert_eq!(p.encoder.init, Init::FanInUniform);
    }

    #[test]
    fn oracle_settings_are_checked() {
        let mut c = desk();
        c.oracle.n = 999;
        assert!(c.validate().is_err());
        let mut c = desk();
        c.oracle.alpha = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_round_trip_and_schema_check() {
        let c = desk();
        let back = ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
        let mut v = serde_json::to_value(&c).unwrap();
        v["schema_version"] = 2.into();
        assert!(matches!(
            ExperimentConfig::from_json(&v.to_string()),
            Err(HarnessError::UnsupportedSchema(Some(2)))
        ));
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let mut c = desk();
        c.bias = BiasConfig::from_codes(1024, 1);
        assert!(c.validate().is_err());
        let mut c = desk();
        c.seeds.clear();
        assert!(c.validate().is_err());
        let mut c = desk();
        c.tasks.push("y9".into());
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_tracks_meaningful_fields_only() {
        let a = desk();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        b.jobs = 17;
        b.stages = Stages::NONE;
        b.train.seed = 99;
        b.setting_id = "renamed".into();
        assert_eq!(a.config_hash(), b.config_hash());
        for change in [
            |c: &mut ExperimentConfig| c.train.lr = 2e-4,
            |c: &mut ExperimentConfig| c.seeds.push(5),
            |c: &mut ExperimentConfig| c.bias = BiasConfig::from_codes(11, 1),
            |c: &mut ExperimentConfig| c.encoder.output_dim = Some(4),
            |c: &mut ExperimentConfig| c.probe.n_eval = 1000,
        ] {
            let mut c = a.clone();
            change(&mut c);
            assert_ne!(a.config_hash(), c.config_hash());
        }
        assert_eq!(a.config_hash().len(), 64);
    }

    #[test]
    fn encoder_width_follows_bias_unless_overridden() {
        let mut c = desk();
        c.bias = BiasConfig {
            theta: crate::bias::SubsetSpec::Indices((1..=8).collect()),
            rho: crate::bias::SubsetSpec::Indices(vec![1, 2]),
            ..BiasConfig::unbiased(10)
        };
        assert_eq!(c.encoder_configs(15, 13).unwrap().0.output_dim, 6);
        c.encoder.output_dim = Some(10);
        assert_eq!(c.encoder_configs(15, 13).unwrap().1.output_dim, 10);
    }
}
