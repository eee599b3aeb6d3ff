use std::fs;
use std::path::PathBuf;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_experiment, ExperimentConfig, HarnessError, RunRecord};
use crate::bias::{BiasConfig, SubsetSpec};
use crate::downstream::DownstreamTable;
use crate::latent::{CovarianceSpec, LatentSpec};
use crate::probe::ProbeReport;

/// Selection codes `{1}, [2], …, [10]` over ten semantics.
pub const SELECTION_AXIS: [u64; 10] = [1, 11, 56, 176, 386, 638, 848, 968, 1013, 1023];
/// Perturbation codes `∅, {1}, [2], …, [9]` under full selection.
pub const PERTURBATION_AXIS: [u64; 10] = [1, 2, 12, 57, 177, 387, 639, 849, 969, 1014];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceRegime {
    /// `Σ_s = I`.
    Independent,
    /// `Σ_s ~ W(I, n_s)`.
    Dependent,
}

impl CovarianceRegime {
    fn apply(self, latent: &LatentSpec) -> LatentSpec {
        let cov_s = match self {
            CovarianceRegime::Independent => CovarianceSpec::identity(latent.n_s),
            CovarianceRegime::Dependent => CovarianceSpec::wishart(latent.n_s, latent.n_s),
        };
        LatentSpec {
            cov_s,
            ..latent.clone()
        }
    }

    fn label(self) -> &'static str {
        match self {
            CovarianceRegime::Independent => "independent",
            CovarianceRegime::Dependent => "dependent",
        }
    }
}

pub const DEFAULT_SWEEP_CAP: usize = 200;

fn default_cap() -> usize {
    DEFAULT_SWEEP_CAP
}

/// Cartesian product of bias settings and covariance regimes around a base
/// experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: ExperimentConfig,
    pub thetas: Vec<SubsetSpec>,
    pub rhos: Vec<SubsetSpec>,
    pub covariances: Vec<CovarianceRegime>,
    #[serde(default = "default_cap")]
    pub max_settings: usize,
}

impl SweepSpec {
    /// Ten selection settings, no perturbation, both regimes.
    pub fn selection(base: ExperimentConfig) -> Self {
        Self {
            base,
            thetas: SELECTION_AXIS.iter().map(|&c| SubsetSpec::Code(c)).collect(),
            rhos: vec![SubsetSpec::Code(1)],
            covariances: vec![CovarianceRegime::Independent, CovarianceRegime::Dependent],
            max_settings: DEFAULT_SWEEP_CAP,
        }
    }

    /// Ten perturbation settings under full selection, both regimes.
    pub fn perturbation(base: ExperimentConfig) -> Self {
        Self {
            base,
            thetas: vec![SubsetSpec::Code(1023)],
            rhos: PERTURBATION_AXIS.iter().map(|&c| SubsetSpec::Code(c)).collect(),
            covariances: vec![CovarianceRegime::Independent, CovarianceRegime::Dependent],
            max_settings: DEFAULT_SWEEP_CAP,
        }
    }

    /// `I_θ = [8]` with `I_ρ = [2]`, independent latents.
    pub fn joint(base: ExperimentConfig) -> Self {
        Self {
            base,
            thetas: vec![SubsetSpec::Indices((1..=8).collect())],
            rhos: vec![SubsetSpec::Indices(vec![1, 2])],
            covariances: vec![CovarianceRegime::Independent],
            max_settings: DEFAULT_SWEEP_CAP,
        }
    }

    pub fn n_settings(&self) -> usize {
        self.thetas.len() * self.rhos.len() * self.covariances.len()
    }

    /// One validated config per setting, in axis order (covariance, θ, ρ).
    pub fn settings(&self) -> Result<Vec<ExperimentConfig>, HarnessError> {
        if self.thetas.is_empty() || self.rhos.is_empty() || self.covariances.is_empty() {
            return Err(HarnessError::InvalidConfig("sweep axes must be non-empty".into()));
        }
        if self.n_settings() > self.max_settings {
            return Err(HarnessError::InvalidConfig(format!(
                "sweep has {} settings, cap is {}",
                self.n_settings(),
                self.max_settings
            )));
        }
        let mut out = Vec::with_capacity(self.n_settings());
        for &cov in &self.covariances {
            for theta in &self.thetas {
                for rho in &self.rhos {
                    let mut cfg = self.base.clone();
                    cfg.latent = cov.apply(&self.base.latent);
                    cfg.bias = BiasConfig {
                        theta: theta.clone(),
                        rho: rho.clone(),
                        ..self.base.bias.clone()
                    };
                    let setting = cfg.resolve_bias()?;
                    cfg.setting_id = format!(
                        "{}_theta{}_rho{}",
                        cov.label(),
                        setting.theta.index,
                        setting.rho.index
                    );
                    cfg.validate()?;
                    out.push(cfg);
                }
            }
        }
        Ok(out)
    }
}

/// One line per (setting, seed) of the sweep status table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepStatusRow {
    pub setting_id: String,
    pub theta: u64,
    pub rho: u64,
    pub seed: u64,
    pub status: String,
    pub error: String,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub status: Vec<SweepStatusRow>,
    pub probe: ProbeReport,
    pub downstream: DownstreamTable,
    pub probe_csv: PathBuf,
    pub downstream_csv: PathBuf,
    pub status_csv: PathBuf,
}

/// Runs every setting on a pool of `base.jobs` workers. A failing setting is
/// recorded and the sweep carries on; aggregated CSVs go to `base.output_dir`.
pub fn sweep(spec: &SweepSpec) -> Result<SweepOutcome, HarnessError> {
    let settings = spec.settings()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.base.jobs)
        .build()
        .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
    info!("sweep over {} settings with {} workers", settings.len(), spec.base.jobs);
    let results: Vec<(ExperimentConfig, Result<RunRecord, HarnessError>)> = pool.install(|| {
        settings
            .into_par_iter()
            .map(|cfg| {
                let r = run_experiment(&cfg);
                (cfg, r)
            })
            .collect()
    });

    let mut status = Vec::new();
    let mut probe = ProbeReport::default();
    let mut downstream = DownstreamTable::default();
    for (cfg, result) in results {
        let bias = cfg.resolve_bias()?;
        let record = match result {
            Ok(r) => Some(r),
            Err(HarnessError::RunFailed(r)) => Some(*r),
            Err(e) => {
                warn!("setting {} failed before running: {e}", cfg.setting_id);
                for &seed in &cfg.seeds {
                    status.push(SweepStatusRow {
                        setting_id: cfg.setting_id.clone(),
                        theta: bias.theta.index,
                        rho: bias.rho.index,
                        seed,
                        status: "failed".into(),
                        error: e.to_string(),
                    });
                }
                None
            }
        };
        let Some(record) = record else { continue };
        for s in &record.seeds {
            status.push(SweepStatusRow {
                setting_id: cfg.setting_id.clone(),
                theta: bias.theta.index,
                rho: bias.rho.index,
                seed: s.plan.master,
                status: if s.failure.is_some() { "failed" } else { "ok" }.into(),
                error: s.failure.clone().unwrap_or_default(),
            });
        }
        if let Some(p) = record.probe {
            probe.extend(p);
        }
        if let Some(d) = record.downstream {
            downstream.extend(d);
        }
    }

    let out_dir = &spec.base.output_dir;
    fs::create_dir_all(out_dir)?;
    let probe_csv = out_dir.join("sweep_probe.csv");
    let downstream_csv = out_dir.join("sweep_downstream.csv");
    let status_csv = out_dir.join("sweep_status.csv");
    probe.write_csv(fs::File::create(&probe_csv)?)?;
    downstream.write_csv(fs::File::create(&downstream_csv)?)?;
    let mut w = csv::Writer::from_path(&status_csv)?;
    for row in &status {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(SweepOutcome {
        status,
        probe,
        downstream,
        probe_csv,
        downstream_csv,
        status_csv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::Profile;

    fn base() -> ExperimentConfig {
        ExperimentConfig::preset(Profile::Desk, LatentSpec::independent(), BiasConfig::unbiased(10))
    }

    #[test]
    fn selection_axis_decodes_to_prefixes() {
        let s = SweepSpec::selection(base()).settings().unwrap();
        assert_eq!(s.len(), 20);
        for (i, cfg) in s[..10].iter().enumerate() {
            let b = cfg.resolve_bias().unwrap();
            assert_eq!(b.theta.index, SELECTION_AXIS[i]);
            assert_eq!(b.selected(), &(1..=i + 1).collect::<Vec<_>>()[..]);
            assert!(b.perturbable().is_empty());
        }
        assert!(s[10..].iter().all(|c| c.setting_id.starts_with("dependent")));
    }

    #[test]
    fn perturbation_axis_decodes_to_prefixes() {
        let s = SweepSpec::perturbation(base()).settings().unwrap();
        assert_eq!(s.len(), 20);
        for (i, cfg) in s[..10].iter().enumerate() {
            let b = cfg.resolve_bias().unwrap();
            assert_eq!(b.rho.index, PERTURBATION_AXIS[i]);
            assert_eq!(b.perturbable(), &(1..=i).collect::<Vec<_>>()[..]);
        }
    }

    #[test]
    fn joint_setting() {
        let s = SweepSpec::joint(base()).settings().unwrap();
        let b = s[0].resolve_bias().unwrap();
        assert_eq!(b.theta.index, 968);
        assert_eq!(b.perturbable(), &[1, 2]);
        assert_eq!(s[0].encoder_configs(15, 13).unwrap().0.output_dim, 6);
    }

    #[test]
    fn cap_and_empty_axes() {
        let mut s = SweepSpec::selection(base());
        s.max_settings = 5;
        assert!(s.settings().is_err());
        let mut s = SweepSpec::selection(base());
        s.rhos.clear();
        assert!(s.settings().is_err());
    }
}
