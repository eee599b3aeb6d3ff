use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_linear_probe, fit_mlp_probe, mean_r_squared, MlpProbeConfig, ProbeError, ProbeTarget};
use crate::bias::BiasSetting;
use crate::latent::{GenerativeModel, LatentBatch};
use crate::mmcl::Representation;
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Zx,
    Zt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Linear,
    Mlp,
}

/// How the evaluation samples are split between probe fitting and scoring.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    /// One set of `n_eval` samples, first half fits, second half scores.
    #[default]
    Half,
    /// Two independent sets of `n_eval` samples each.
    TwoSets,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub n_eval: usize,
    #[serde(default)]
    pub split: EvalSplit,
    pub kinds: Vec<ProbeKind>,
    pub mlp: MlpProbeConfig,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            n_eval: 20_480,
            split: EvalSplit::Half,
            kinds: vec![ProbeKind::Linear, ProbeKind::Mlp],
            mlp: MlpProbeConfig::default(),
            seed: 0,
        }
    }
}

/// Score of one probe on one target for one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeScore {
    pub source: Source,
    pub kind: ProbeKind,
    pub target: String,
    pub score: f64,
}

/// Names of the probe targets: `s_1 … s_{n_s}`, then the two blocks.
pub fn target_names(n_s: usize) -> Vec<String> {
    (1..=n_s)
        .map(|i| format!("s_{i}"))
        .chain(["m_x".to_string(), "m_t".to_string()])
        .collect()
}

fn target_matrix(latents: &LatentBatch, idx: usize) -> Matrix {
    let n_s = latents.s.cols();
    match idx {
        i if i < n_s => latents.s.select_columns(&[i]),
        i if i == n_s => latents.m_x.clone(),
        _ => latents.m_t.clone(),
    }
}

/// Fits every configured probe kind, for each source and each target, on
/// fresh evaluation data for one trained run.
pub fn probe_run<R: Representation + Sync + ?Sized>(
    rep: &R,
    model: &GenerativeModel,
    cfg: &ProbeConfig,
) -> Result<Vec<ProbeScore>, ProbeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (fit, eval) = match cfg.split {
        EvalSplit::Half => {
            let all = model.sample_pairs(cfg.n_eval, &mut rng)?;
            let half = cfg.n_eval / 2;
            let take = |b: &crate::latent::PairBatch, a: usize, z: usize| {
                (
                    LatentBatch {
                        s: b.latents.s.slice_rows(a, z),
                        m_x: b.latents.m_x.slice_rows(a, z),
                        m_t: b.latents.m_t.slice_rows(a, z),
                    },
                    b.x.slice_rows(a, z),
                    b.t.slice_rows(a, z),
                )
            };
            (take(&all, 0, half), take(&all, half, cfg.n_eval))
        }
        EvalSplit::TwoSets => {
            let a = model.sample_pairs(cfg.n_eval, &mut rng)?;
            let b = model.sample_pairs(cfg.n_eval, &mut rng)?;
            ((a.latents, a.x, a.t), (b.latents, b.x, b.t))
        }
    };
    let features = |src: Source, x: &Matrix, t: &Matrix| match src {
        Source::Zx => rep.encode_x(x),
        Source::Zt => rep.encode_t(t),
    };
    let sources = [Source::Zx, Source::Zt];
    let fit_feats: Vec<Matrix> = sources.iter().map(|&s| features(s, &fit.1, &fit.2)).collect();
    let eval_feats: Vec<Matrix> = sources.iter().map(|&s| features(s, &eval.1, &eval.2)).collect();
    let names = target_names(model.n_s());

    let mut jobs = Vec::new();
    for (si, &src) in sources.iter().enumerate() {
        for &kind in &cfg.kinds {
            for ti in 0..names.len() {
                jobs.push((si, src, kind, ti));
            }
        }
    }
    jobs.par_iter()
        .enumerate()
        .map(|(j, &(si, source, kind, ti))| {
            let y_fit = target_matrix(&fit.0, ti);
            let y_eval = target_matrix(&eval.0, ti);
            let pred = match kind {
                ProbeKind::Linear => fit_linear_probe(&fit_feats[si], &y_fit)?.predict(&eval_feats[si]),
                ProbeKind::Mlp => {
                    let mlp = MlpProbeConfig {
                        seed: cfg.mlp.seed.wrapping_add(j as u64),
                        ..cfg.mlp.clone()
                    };
                    fit_mlp_probe(&fit_feats[si], ProbeTarget::Regression(&y_fit), &mlp)?
                        .predict(&eval_feats[si])
                }
            };
            Ok(ProbeScore {
                source,
                kind,
                target: names[ti].clone(),
                score: mean_r_squared(&pred, &y_eval)?,
            })
        })
        .collect()
}

/// One line of the report: a probe score averaged over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub setting_id: String,
    pub theta: u64,
    pub rho: u64,
    pub source: Source,
    pub probe_kind: ProbeKind,
    pub target: String,
    pub mean_score: f64,
    /// Sample standard deviation across seeds (0 for a single seed).
    pub std_score: f64,
    pub n_seeds: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub rows: Vec<ProbeRow>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

impl ProbeReport {
    /// Averages per-seed scores; every seed must cover the same probes.
    pub fn aggregate(setting_id: &str, bias: &BiasSetting, per_seed: &[Vec<ProbeScore>]) -> Self {
        let Some(first) = per_seed.first() else {
            return Self::default();
        };
        let rows = first
            .iter()
            .map(|p| {
                let scores: Vec<f64> = per_seed
                    .iter()
                    .filter_map(|run| {
                        run.iter()
                            .find(|q| q.source == p.source && q.kind == p.kind && q.target == p.target)
                            .map(|q| q.score)
                    })
                    .collect();
                let (mean_score, std_score) = mean_std(&scores);
                ProbeRow {
                    setting_id: setting_id.to_string(),
                    theta: bias.theta.index,
                    rho: bias.rho.index,
                    source: p.source,
                    probe_kind: p.kind,
                    target: p.target.clone(),
                    mean_score,
                    std_score,
                    n_seeds: scores.len(),
                }
            })
            .collect();
        Self { rows }
    }

    pub fn get(&self, source: Source, kind: ProbeKind, target: &str) -> Option<&ProbeRow> {
        self.rows
            .iter()
            .find(|r| r.source == source && r.probe_kind == kind && r.target == target)
    }

    pub fn mean_score(&self, source: Source, kind: ProbeKind, target: &str) -> Option<f64> {
        self.get(source, kind, target).map(|r| r.mean_score)
    }

    pub fn extend(&mut self, other: ProbeReport) {
        self.rows.extend(other.rows);
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ProbeError> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self, ProbeError> {
        let rows = csv::Reader::from_reader(r)
            .deserialize()
            .collect::<Result<_, _>>()?;
        Ok(Self { rows })
    }
}

/// Probes each `(representation, model)` run (one per seed) and averages.
/// Run `i` draws its evaluation data from seed `cfg.seed + i`.
pub fn identifiability_report<R: Representation + Sync>(
    setting_id: &str,
    runs: &[(&R, &GenerativeModel)],
    cfg: &ProbeConfig,
) -> Result<ProbeReport, ProbeError> {
    let mut per_seed = Vec::with_capacity(runs.len());
    for (i, (rep, model)) in runs.iter().enumerate() {
        let c = ProbeConfig {
            seed: cfg.seed.wrapping_add(i as u64),
            ..cfg.clone()
        };
        per_seed.push(probe_run(*rep, model, &c)?);
    }
    let Some((_, model)) = runs.first() else {
        return Ok(ProbeReport::default());
    };
    Ok(ProbeReport::aggregate(setting_id, &model.bias, &per_seed))
}
