//! Probes that read latent coordinates back out of learned representations,
//! plus the analytic optimum they are compared against.

mod darmois;
mod ks;
mod linear;
mod metrics;
mod mlp_probe;
mod oracle;
mod report;

pub use darmois::DarmoisMap;
pub use ks::{
    kolmogorov_quantile, kolmogorov_survival, ks_statistic_uniform, ks_uniformity_test, KsResult,
    MIN_KS_SAMPLES,
};
pub use linear::{fit_linear_probe, LinearProbe, RIDGE};
pub use metrics::{mcc, mean_r_squared, r_squared};
pub use mlp_probe::{fit_mlp_probe, MlpProbe, MlpProbeConfig, ProbeTarget};
pub use oracle::{verify_global_minimum, DarmoisOracle, GlobalMinimumReport};
pub use report::{
    identifiability_report, mean_std, probe_run, target_names, EvalSplit, ProbeConfig, ProbeKind,
    ProbeReport, ProbeRow, ProbeScore, Source,
};

use thiserror::Error;

use crate::latent::ModelError;
use crate::mmcl::MmclError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("length mismatch: {pred} predictions for {target} targets")]
    LengthMismatch { pred: usize, target: usize },
    #[error("need at least {needed} samples, got {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("truth labels contain a single class")]
    SingleClass,
    #[error("least-squares system is singular")]
    Singular,
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("probe loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("invalid probe config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mmcl(#[from] MmclError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
