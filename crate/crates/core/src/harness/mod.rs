//! Experiment configuration, deterministic seeding, single runs and sweeps.

mod config;
mod run;
pub mod seeds;
mod sweep;

pub use config::{
    EncoderSettings, ExperimentConfig, OracleSettings, Profile, Stages, CONFIG_SCHEMA_VERSION,
};
pub use run::{
    build_model, downstream_config, probe_config, run_experiment, run_seed, train_config,
    RunRecord, SeedOutcome, SeedPlan, SeedRecord, CHECKPOINT_FILE, FAILURE_MARKER, HISTORY_FILE,
    LAST_GOOD_FILE, MODEL_FILE,
};
pub use sweep::{
    sweep, CovarianceRegime, SweepOutcome, SweepSpec, SweepStatusRow, DEFAULT_SWEEP_CAP,
    PERTURBATION_AXIS, SELECTION_AXIS,
};

use std::path::PathBuf;

use thiserror::Error;

use crate::bias::BiasError;
use crate::downstream::DownstreamError;
use crate::latent::ModelError;
use crate::mmcl::MmclError;
use crate::probe::ProbeError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("unsupported config schema version {0:?}")]
    UnsupportedSchema(Option<u64>),
    #[error("missing artifact {path}: {reason}")]
    MissingArtifact { path: PathBuf, reason: String },
    #[error("stage {stage} failed: {message}")]
    StageFailed { stage: String, message: String },
    #[error("{} seed(s) failed in {}", .0.failures().count(), .0.setting_id)]
    RunFailed(Box<RunRecord>),
    #[error(transparent)]
    Bias(#[from] BiasError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mmcl(#[from] MmclError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Downstream(#[from] DownstreamError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
