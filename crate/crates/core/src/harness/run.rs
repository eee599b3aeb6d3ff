use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{error, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::seeds::{stage_seed, Stream};
use super::{ExperimentConfig, HarnessError};
use crate::downstream::{downstream_eval, DownstreamConfig, DownstreamTable, TaskScore};
use crate::latent::GenerativeModel;
use crate::mmcl::{Checkpoint, MmclError, TrainConfig, TrainedPair, Trainer};
use crate::probe::{probe_run, verify_global_minimum, GlobalMinimumReport, ProbeConfig, ProbeReport, ProbeScore};

pub const MODEL_FILE: &str = "model.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LAST_GOOD_FILE: &str = "checkpoint_last_good.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const FAILURE_MARKER: &str = "FAILED";

/// Stage seeds of one run, all derived from its master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPlan {
    pub master: u64,
    pub model: u64,
    pub train: u64,
    pub probe: u64,
    pub downstream: u64,
    pub oracle: u64,
}

impl SeedPlan {
    pub fn new(master: u64) -> Self {
        Self {
            master,
            model: stage_seed(master, Stream::Model),
            train: stage_seed(master, Stream::Train),
            probe: stage_seed(master, Stream::Probe),
            downstream: stage_seed(master, Stream::Downstream),
            oracle: stage_seed(master, Stream::Oracle),
        }
    }
}

/// In-memory products of one seed's pipeline.
#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub plan: SeedPlan,
    pub model: GenerativeModel,
    pub trained: Option<TrainedPair>,
    pub probe: Option<Vec<ProbeScore>>,
    pub downstream: Option<Vec<TaskScore>>,
    pub oracle: Option<GlobalMinimumReport>,
}

pub fn build_model(cfg: &ExperimentConfig, plan: &SeedPlan) -> Result<GenerativeModel, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.model);
    Ok(GenerativeModel::build(&cfg.latent, &cfg.bias, &cfg.generator, &mut rng)?)
}

pub fn train_config(cfg: &ExperimentConfig, plan: &SeedPlan) -> TrainConfig {
    TrainConfig {
        seed: plan.train,
        ..cfg.train.clone()
    }
}

pub fn probe_config(cfg: &ExperimentConfig, plan: &SeedPlan) -> ProbeConfig {
    let mut p = cfg.probe.clone();
    p.seed = plan.probe;
    p.mlp.seed = plan.probe ^ 0x5eed;
    p
}

pub fn downstream_config(cfg: &ExperimentConfig, plan: &SeedPlan) -> DownstreamConfig {
    let mut d = cfg.downstream.clone();
    d.seed = plan.downstream;
    d.head.seed = plan.downstream ^ 0x5eed;
    d
}

/// Runs every stage for one seed in memory, without touching disk.
pub fn run_seed(cfg: &ExperimentConfig, master: u64) -> Result<SeedOutcome, HarnessError> {
    cfg.validate()?;
    let plan = SeedPlan::new(master);
    let model = build_model(cfg, &plan)?;
    let mut out = SeedOutcome {
        plan,
        model,
        trained: None,
        probe: None,
        downstream: None,
        oracle: None,
    };
    if cfg.stages.train {
        let (ex, et) = cfg.encoder_configs(out.model.x_dim(), out.model.t_dim())?;
        let trainer = Trainer::new(&ex, &et, &train_config(cfg, &plan))?;
        out.trained = Some(trainer.run(&out.model)?);
    }
    evaluate(cfg, &mut out)?;
    Ok(out)
}

fn evaluate(cfg: &ExperimentConfig, out: &mut SeedOutcome) -> Result<(), HarnessError> {
    let plan = out.plan;
    if let Some(trained) = &out.trained {
        if cfg.stages.probe {
            out.probe = Some(probe_run(trained, &out.model, &probe_config(cfg, &plan))?);
        }
        if cfg.stages.downstream {
            let tasks = cfg.task_specs()?;
            out.downstream = Some(downstream_eval(trained, &out.model, &tasks, &downstream_config(cfg, &plan))?);
        }
    }
    if cfg.stages.oracle {
        let mut rng = ChaCha8Rng::seed_from_u64(plan.oracle);
        out.oracle = Some(verify_global_minimum(&out.model, cfg.oracle.n, cfg.oracle.alpha, &mut rng)?);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub plan: SeedPlan,
    pub dir: PathBuf,
    /// `None` on success, otherwise `stage: error`.
    pub failure: Option<String>,
    pub stage_seconds: Vec<(String, f64)>,
}

/// Everything a finished (or partially finished) experiment produced.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub setting_id: String,
    pub config_hash: String,
    pub dir: PathBuf,
    pub seeds: Vec<SeedRecord>,
    pub probe: Option<ProbeReport>,
    pub downstream: Option<DownstreamTable>,
    pub oracle: Vec<(u64, GlobalMinimumReport)>,
}

impl RunRecord {
    pub fn failures(&self) -> impl Iterator<Item = &SeedRecord> {
        self.seeds.iter().filter(|s| s.failure.is_some())
    }
}

#[derive(Serialize)]
struct Metadata<'a> {
    setting_id: &'a str,
    config_hash: &'a str,
    crate_version: &'static str,
    config: &'a ExperimentConfig,
    seeds: &'a [SeedRecord],
    notes: &'a [&'a str],
}

const NOTES: &[&str] = &[
    "classification head: two-layer MLP (width from probe settings)",
    "stage seeds derived from each master seed by SplitMix64 counter mixing",
    "models depend only on the master seed, so settings sharing a seed share generator draws where dimensions agree",
];

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::MissingArtifact {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(serde_json::from_str(&text)?)
}

struct StageClock(Vec<(String, f64)>);

impl StageClock {
    fn time<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T, HarnessError>) -> Result<T, HarnessError> {
        let t0 = Instant::now();
        let out = f().map_err(|e| HarnessError::StageFailed {
            stage: name.to_string(),
            message: e.to_string(),
        });
        self.0.push((name.to_string(), t0.elapsed().as_secs_f64()));
        out
    }
}

/// Per-seed pipeline with artifacts under `dir`. Disabled stages load their
/// products from earlier runs in the same directory.
fn run_seed_on_disk(cfg: &ExperimentConfig, plan: SeedPlan, dir: &Path, clock: &mut StageClock) -> Result<SeedOutcome, HarnessError> {
    fs::create_dir_all(dir)?;
    let _ = fs::remove_file(dir.join(FAILURE_MARKER));
    let model = if cfg.stages.generate {
        clock.time("generate", || {
            let m = build_model(cfg, &plan)?;
            write_json(&dir.join(MODEL_FILE), &m)?;
            Ok(m)
        })?
    } else {
        read_json(&dir.join(MODEL_FILE))?
    };
    let needs_encoders = cfg.stages.probe || cfg.stages.downstream;
    let trained = if cfg.stages.train {
        Some(clock.time("train", || {
            let (ex, et) = cfg.encoder_configs(model.x_dim(), model.t_dim())?;
            let mut trainer = Trainer::new(&ex, &et, &train_config(cfg, &plan))?;
            while !trainer.is_done() {
                if let Err(e) = trainer.step(&model) {
                    if let MmclError::NonFiniteLoss { last_good, .. } = &e {
                        write_json(&dir.join(LAST_GOOD_FILE), last_good.as_ref())?;
                    }
                    return Err(e.into());
                }
            }
            write_json(&dir.join(CHECKPOINT_FILE), trainer.checkpoint())?;
            let trained = trainer.finish();
            let f = fs::File::create(dir.join(HISTORY_FILE))?;
            crate::mmcl::write_history_csv(&trained.history, f)?;
            Ok(trained)
        })?)
    } else if needs_encoders {
        let ck: Checkpoint = read_json(&dir.join(CHECKPOINT_FILE))?;
        Some(Trainer::from_checkpoint(ck)?.finish())
    } else {
        None
    };
    let mut out = SeedOutcome {
        plan,
        model,
        trained,
        probe: None,
        downstream: None,
        oracle: None,
    };
    let stages = cfg.stages;
    if let Some(trained) = &out.trained {
        if stages.probe {
            out.probe = Some(clock.time("probe", || Ok(probe_run(trained, &out.model, &probe_config(cfg, &plan))?))?);
        }
        if stages.downstream {
            out.downstream = Some(clock.time("downstream", || {
                let tasks = cfg.task_specs()?;
                Ok(downstream_eval(trained, &out.model, &tasks, &downstream_config(cfg, &plan))?)
            })?);
        }
    }
    if stages.oracle {
        out.oracle = Some(clock.time("oracle", || {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.oracle);
            let r = verify_global_minimum(&out.model, cfg.oracle.n, cfg.oracle.alpha, &mut rng)?;
            write_json(&dir.join("oracle.json"), &r)?;
            Ok(r)
        })?);
    }
    Ok(out)
}

/// Executes the enabled stages (generate → train → probe → downstream →
/// oracle) for every seed, writing artifacts under
/// `output_dir/setting_id/seed_<s>/` and aggregated tables one level up.
///
/// A failing stage stops that seed; a `FAILED` marker is written next to
/// its partial artifacts and the remaining seeds still run. If any seed
/// failed the partial record comes back inside [`HarnessError::RunFailed`].
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunRecord, HarnessError> {
    cfg.validate()?;
    let hash = cfg.config_hash();
    let dir = cfg.output_dir.join(&cfg.setting_id);
    fs::create_dir_all(&dir)?;
    let _ = fs::remove_file(dir.join(FAILURE_MARKER));
    info!("run {} ({}) in {}", cfg.setting_id, &hash[..12], dir.display());

    let results: Vec<(SeedRecord, Option<SeedOutcome>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let plan = SeedPlan::new(seed);
            let seed_dir = dir.join(format!("seed_{seed}"));
            let mut clock = StageClock(Vec::new());
            let result = run_seed_on_disk(cfg, plan, &seed_dir, &mut clock);
            let (failure, outcome) = match result {
                Ok(o) => (None, Some(o)),
                Err(e) => {
                    error!("{} seed {seed}: {e}", cfg.setting_id);
                    let _ = fs::create_dir_all(&seed_dir);
                    let _ = fs::write(seed_dir.join(FAILURE_MARKER), format!("{e}\n"));
                    (Some(e.to_string()), None)
                }
            };
            let rec = SeedRecord {
                plan,
                dir: seed_dir,
                failure,
                stage_seconds: clock.0,
            };
            (rec, outcome)
        })
        .collect();

    let seeds: Vec<SeedRecord> = results.iter().map(|(r, _)| r.clone()).collect();
    let ok: Vec<&SeedOutcome> = results.iter().filter_map(|(_, o)| o.as_ref()).collect();
    let bias = cfg.resolve_bias()?;

    let probe_scores: Vec<Vec<ProbeScore>> = ok.iter().filter_map(|o| o.probe.clone()).collect();
    let probe = (!probe_scores.is_empty()).then(|| ProbeReport::aggregate(&cfg.setting_id, &bias, &probe_scores));
    if let Some(p) = &probe {
        p.write_csv(fs::File::create(dir.join("probe_report.csv"))?)?;
    }
    let ds_scores: Vec<Vec<TaskScore>> = ok.iter().filter_map(|o| o.downstream.clone()).collect();
    let downstream = (!ds_scores.is_empty()).then(|| DownstreamTable::aggregate(&cfg.setting_id, &ds_scores));
    if let Some(d) = &downstream {
        d.write_csv(fs::File::create(dir.join("downstream.csv"))?)?;
    }
    let oracle = ok
        .iter()
        .filter_map(|o| o.oracle.clone().map(|r| (o.plan.master, r)))
        .collect();

    write_json(
        &dir.join("metadata.json"),
        &Metadata {
            setting_id: &cfg.setting_id,
            config_hash: &hash,
            crate_version: env!("CARGO_PKG_VERSION"),
            config: cfg,
            seeds: &seeds,
            notes: NOTES,
        },
    )?;
    let record = RunRecord {
        setting_id: cfg.setting_id.clone(),
        config_hash: hash,
        dir: dir.clone(),
        seeds,
        probe,
        downstream,
        oracle,
    };
    if record.failures().next().is_some() {
        let msg: Vec<String> = record
            .failures()
            .map(|s| format!("seed {}: {}", s.plan.master, s.failure.as_deref().unwrap_or("")))
            .collect();
        fs::write(dir.join(FAILURE_MARKER), msg.join("\n") + "\n")?;
        return Err(HarnessError::RunFailed(Box::new(record)));
    }
    Ok(record)
}
