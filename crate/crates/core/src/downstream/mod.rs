//! Downstream regression and classification tasks on frozen image-side
//! representations, in distribution and under a heavy-tailed shift.

use std::io::Write;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latent::{ood_shift_batch, GenerativeModel, ModelError};
use crate::mmcl::Representation;
use crate::numerics::Matrix;
use crate::probe::{fit_mlp_probe, mcc, mean_std, r_squared, MlpProbeConfig, ProbeError, ProbeTarget};

#[derive(Debug, Error)]
pub enum DownstreamError {
    #[error("task {task} reads {dims} semantic dims but the model has {n_s}")]
    TaskTooWide { task: String, dims: usize, n_s: usize },
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Nonlinear label with polynomial interactions up to third order:
/// `Σs² + 0.3Σs³ + 0.5Σ_{i<j}s_is_j + 0.2Σ_{i<j<k}s_is_js_k
///  + 0.7Σ(sin s + cos s) + 0.4Σln(1+|s|) + 0.4Σe^{−|s|}`.
pub fn label_fn(s: &[f64]) -> f64 {
    let d = s.len();
    let mut total = 0.0;
    for &v in s {
        total += v * v + 0.3 * v * v * v;
        total += 0.7 * (v.sin() + v.cos());
        total += 0.4 * v.abs().ln_1p() + 0.4 * (-v.abs()).exp();
    }
    let mut pairs = 0.0;
    let mut triples = 0.0;
    for i in 0..d {
        for j in i + 1..d {
            pairs += s[i] * s[j];
            for k in j + 1..d {
                triples += s[i] * s[j] * s[k];
            }
        }
    }
    total + 0.5 * pairs + 0.2 * triples
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty slice");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Label 1 iff strictly above `threshold`.
pub fn binarize_at(values: &[f64], threshold: f64) -> Vec<usize> {
    values.iter().map(|&v| (v > threshold) as usize).collect()
}

/// Labels strictly-above-median values 1; also returns the median so other
/// splits can be labelled with the same threshold.
pub fn binarize_median(values: &[f64]) -> Result<(Vec<usize>, f64), DownstreamError> {
    if values.len() < 2 {
        return Err(DownstreamError::TooFewSamples(values.len()));
    }
    let m = median(values);
    let labels = binarize_at(values, m);
    if labels.iter().all(|&l| l == 0) {
        warn!("binarize_median: no value lies above the median, split is degenerate");
    }
    Ok((labels, m))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    Classification,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    /// The label reads `s_1 … s_{input_dims}`.
    pub input_dims: usize,
    pub kind: TaskKind,
    /// 1-based dims shifted for the OOD split.
    pub ood_dims: Vec<usize>,
}

impl TaskSpec {
    fn new(name: &str, input_dims: usize, kind: TaskKind) -> Self {
        Self {
            name: name.into(),
            input_dims,
            kind,
            ood_dims: vec![9, 10],
        }
    }

    /// `y1 … y4` over prefixes `[3], [5], [7], [9]`, and `y2_class`.
    pub fn standard() -> Vec<TaskSpec> {
        vec![
            Self::new("y1", 3, TaskKind::Regression),
            Self::new("y2", 5, TaskKind::Regression),
            Self::new("y3", 7, TaskKind::Regression),
            Self::new("y4", 9, TaskKind::Regression),
            Self::new("y2_class", 5, TaskKind::Classification),
        ]
    }

    pub fn named(name: &str) -> Option<TaskSpec> {
        Self::standard().into_iter().find(|t| t.name == name)
    }

    fn labels(&self, s: &Matrix) -> Vec<f64> {
        (0..s.rows()).map(|r| label_fn(&s.row(r)[..self.input_dims])).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DownstreamConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub head: MlpProbeConfig,
    pub seed: u64,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        Self {
            n_train: 20_480,
            n_test: 20_480,
            head: MlpProbeConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Id,
    Ood,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    R2,
    Mcc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub task: String,
    pub split: Split,
    pub metric: Metric,
    pub value: f64,
}

/// Fits one MLP head per task on `f_x(x)` of an ID training set and scores it
/// on an ID test set; classification heads are also scored, unchanged, on a
/// separate draw of `n_test` latents pushed through the OOD shift.
/// Regression is reported ID only.
pub fn downstream_eval<R: Representation + ?Sized>(
    rep: &R,
    model: &GenerativeModel,
    tasks: &[TaskSpec],
    cfg: &DownstreamConfig,
) -> Result<Vec<TaskScore>, DownstreamError> {
    let n_s = model.n_s();
    for t in tasks {
        if t.input_dims > n_s || t.ood_dims.iter().any(|&d| d == 0 || d > n_s) {
            return Err(DownstreamError::TaskTooWide {
                task: t.name.clone(),
                dims: t.input_dims,
                n_s,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let train = model.sample_latents(cfg.n_train, &mut rng);
    let test = model.sample_latents(cfg.n_test, &mut rng);
    let ood = model.sample_latents(cfg.n_test, &mut rng);
    let z_train = rep.encode_x(&model.render_images(&train.s, &train.m_x)?);
    let z_test = rep.encode_x(&model.render_images(&test.s, &test.m_x)?);

    let mut out = Vec::new();
    for (i, task) in tasks.iter().enumerate() {
        let head = MlpProbeConfig {
            seed: cfg.head.seed.wrapping_add(i as u64),
            ..cfg.head.clone()
        };
        let y_train = task.labels(&train.s);
        let y_test = task.labels(&test.s);
        match task.kind {
            TaskKind::Regression => {
                let probe = fit_mlp_probe(
                    &z_train,
                    ProbeTarget::Regression(&Matrix::column_vector(&y_train)),
                    &head,
                )?;
                let pred = probe.predict(&z_test);
                out.push(TaskScore {
                    task: task.name.clone(),
                    split: Split::Id,
                    metric: Metric::R2,
                    value: r_squared(pred.as_slice(), &y_test)?,
                });
            }
            TaskKind::Classification => {
                let (l_train, threshold) = binarize_median(&y_train)?;
                let probe = fit_mlp_probe(&z_train, ProbeTarget::Classification(&l_train), &head)?;
                let l_test = binarize_at(&y_test, threshold);
                out.push(TaskScore {
                    task: task.name.clone(),
                    split: Split::Id,
                    metric: Metric::Mcc,
                    value: mcc(&probe.predict_labels(&z_test), &l_test)?,
                });
                let s_ood = ood_shift_batch(&ood.s, &task.ood_dims)?;
                let z_ood = rep.encode_x(&model.render_images(&s_ood, &ood.m_x)?);
                let l_ood = binarize_at(&task.labels(&s_ood), threshold);
                out.push(TaskScore {
                    task: task.name.clone(),
                    split: Split::Ood,
                    metric: Metric::Mcc,
                    value: mcc(&probe.predict_labels(&z_ood), &l_ood)?,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DownstreamRow {
    pub setting_id: String,
    pub task: String,
    pub split: Split,
    pub metric: Metric,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DownstreamTable {
    pub rows: Vec<DownstreamRow>,
}

impl DownstreamTable {
    pub fn aggregate(setting_id: &str, per_seed: &[Vec<TaskScore>]) -> Self {
        let Some(first) = per_seed.first() else {
            return Self::default();
        };
        let rows = first
            .iter()
            .map(|s| {
                let values: Vec<f64> = per_seed
                    .iter()
                    .filter_map(|run| {
                        run.iter()
                            .find(|q| q.task == s.task && q.split == s.split && q.metric == s.metric)
                            .map(|q| q.value)
                    })
                    .collect();
                let (mean, std) = mean_std(&values);
                DownstreamRow {
                    setting_id: setting_id.to_string(),
                    task: s.task.clone(),
                    split: s.split,
                    metric: s.metric,
                    mean,
                    std,
                    n_seeds: values.len(),
                }
            })
            .collect();
        Self { rows }
    }

    pub fn mean(&self, task: &str, split: Split) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.task == task && r.split == split)
            .map(|r| r.mean)
    }

    pub fn extend(&mut self, other: DownstreamTable) {
        self.rows.extend(other.rows);
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DownstreamError> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }
}
