use std::io::Write;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{align_maxent_diagnostic, info_nce_on_tape, Diagnostic, MmclError, Similarity};
use crate::latent::GenerativeModel;
use crate::numerics::{clip_global_norm, Activation, AdamState, Init, Matrix, Mlp, NumericsError, Tape};

pub const CHECKPOINT_VERSION: u32 = 1;

fn default_width() -> usize {
    64
}

fn default_layers() -> usize {
    7
}

/// Shape of one modality encoder: `n_layers` dense layers, leaky-ReLU
/// between them, linear (or sigmoid when `bounded_output`) at the end.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    #[serde(default = "default_width")]
    pub hidden_width: usize,
    #[serde(default = "default_layers")]
    pub n_layers: usize,
    pub output_dim: usize,
    #[serde(default)]
    pub bounded_output: bool,
    #[serde(default)]
    pub init: Init,
}

impl EncoderConfig {
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_width: default_width(),
            n_layers: default_layers(),
            output_dim,
            bounded_output: false,
            init: Init::default(),
        }
    }

    pub fn validate(&self) -> Result<(), MmclError> {
        if self.input_dim == 0 || self.output_dim == 0 || self.n_layers == 0 || self.hidden_width == 0 {
            return Err(MmclError::InvalidConfig(format!(
                "encoder dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim];
        sizes.extend(std::iter::repeat_n(self.hidden_width, self.n_layers - 1));
        sizes.push(self.output_dim);
        sizes
    }
}

/// A modality encoder. Weights are only reachable read-only from outside
/// the trainer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    config: EncoderConfig,
    net: Mlp,
}

impl Encoder {
    pub fn new(config: &EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self, MmclError> {
        config.validate()?;
        let output = if config.bounded_output {
            Activation::Sigmoid
        } else {
            Activation::Identity
        };
        Ok(Self {
            config: config.clone(),
            net: Mlp::with_init(&config.sizes(), Activation::LEAKY_0_2, output, config.init, rng),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn encode(&self, x: &Matrix) -> Matrix {
        self.net.forward(x)
    }
}

fn default_diag_every() -> usize {
    100
}

/// Learning-rate schedule over the run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// `lr · ½(1 + cos(π·step/steps))`, annealing to zero at the last step.
    Cosine,
}

impl LrSchedule {
    pub fn rate(self, base: f64, step: usize, steps: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let frac = step as f64 / steps.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    pub temperature: f64,
    pub clip_norm: f64,
    #[serde(default)]
    pub similarity: Similarity,
    pub seed: u64,
    /// Record the alignment/entropy diagnostic every this many steps (0 = never).
    #[serde(default = "default_diag_every")]
    pub diagnostic_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            steps: 10_000,
            lr: 1e-4,
            lr_schedule: LrSchedule::Constant,
            temperature: 1.0,
            clip_norm: 2.0,
            similarity: Similarity::NegSqEuclidean,
            seed: 0,
            diagnostic_every: default_diag_every(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MmclError> {
        let bad = |m: String| Err(MmclError::InvalidConfig(m));
        if self.batch_size < 2 {
            return bad(format!("batch size {} < 2", self.batch_size));
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature {} must be positive", self.temperature));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip norm {} must be positive", self.clip_norm));
        }
        if !(self.lr > 0.0) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub step: usize,
    pub loss: f64,
    pub diagnostic: Option<Diagnostic>,
}

/// Source of paired `(x, t)` batches. Implementations draw fresh pairs on
/// every call unless they say otherwise.
pub trait PairSampler {
    fn sample_pairs(&self, k: usize, rng: &mut ChaCha8Rng) -> Result<(Matrix, Matrix), MmclError>;
}

impl PairSampler for GenerativeModel {
    fn sample_pairs(&self, k: usize, rng: &mut ChaCha8Rng) -> Result<(Matrix, Matrix), MmclError> {
        let b = GenerativeModel::sample_pairs(self, k, rng)?;
        Ok((b.x, b.t))
    }
}

/// Returns the same batch on every call.
#[derive(Clone, Debug)]
pub struct FixedBatch {
    pub x: Matrix,
    pub t: Matrix,
}

impl PairSampler for FixedBatch {
    fn sample_pairs(&self, k: usize, _: &mut ChaCha8Rng) -> Result<(Matrix, Matrix), MmclError> {
        if k != self.x.rows() {
            return Err(MmclError::InvalidConfig(format!(
                "fixed batch has {} pairs, {k} requested",
                self.x.rows()
            )));
        }
        Ok((self.x.clone(), self.t.clone()))
    }
}

/// Maps observations of either modality into the shared embedding space.
pub trait Representation {
    fn encode_x(&self, x: &Matrix) -> Matrix;
    fn encode_t(&self, t: &Matrix) -> Matrix;
}

/// Everything needed to resume a run bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub train: TrainConfig,
    pub f_x: Encoder,
    pub f_t: Encoder,
    pub adam_x: AdamState,
    pub adam_t: AdamState,
    pub rng: ChaCha8Rng,
    pub step: usize,
    pub history: Vec<HistoryRecord>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String, MmclError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, MmclError> {
        let v: serde_json::Value = serde_json::from_str(s)?;
        let version = v.get("version").and_then(|x| x.as_u64()).unwrap_or(0) as u32;
        if version != CHECKPOINT_VERSION {
            return Err(MmclError::UnsupportedVersion(version));
        }
        Ok(serde_json::from_value(v)?)
    }
}

/// Output of a finished run. The encoders are frozen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedPair {
    pub f_x: Encoder,
    pub f_t: Encoder,
    pub train: TrainConfig,
    pub history: Vec<HistoryRecord>,
}

impl Representation for TrainedPair {
    fn encode_x(&self, x: &Matrix) -> Matrix {
        self.f_x.encode(x)
    }

    fn encode_t(&self, t: &Matrix) -> Matrix {
        self.f_t.encode(t)
    }
}

/// Stepwise trainer; [`train`] runs it to completion.
#[derive(Clone, Debug)]
pub struct Trainer {
    state: Checkpoint,
}

impl Trainer {
    /// Initializes both encoders from `cfg.seed`; the same generator then
    /// drives batch sampling.
    pub fn new(enc_x: &EncoderConfig, enc_t: &EncoderConfig, cfg: &TrainConfig) -> Result<Self, MmclError> {
        cfg.validate()?;
        if enc_x.output_dim != enc_t.output_dim {
            return Err(MmclError::InvalidConfig(format!(
                "embedding widths differ: {} vs {}",
                enc_x.output_dim, enc_t.output_dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let f_x = Encoder::new(enc_x, &mut rng)?;
        let f_t = Encoder::new(enc_t, &mut rng)?;
        Ok(Self {
            state: Checkpoint {
                version: CHECKPOINT_VERSION,
                adam_x: AdamState::new(f_x.net.params(), cfg.lr),
                adam_t: AdamState::new(f_t.net.params(), cfg.lr),
                train: cfg.clone(),
                f_x,
                f_t,
                rng,
                step: 0,
                history: Vec::with_capacity(cfg.steps),
            },
        })
    }

    pub fn from_checkpoint(state: Checkpoint) -> Result<Self, MmclError> {
        if state.version != CHECKPOINT_VERSION {
            return Err(MmclError::UnsupportedVersion(state.version));
        }
        state.train.validate()?;
        Ok(Self { state })
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.state
    }

    pub fn step_index(&self) -> usize {
        self.state.step
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.state.train.steps
    }

    /// One optimization step on a freshly sampled batch. On a non-finite
    /// loss or gradient nothing is modified and the error carries the state
    /// from before the step.
    pub fn step<S: PairSampler + ?Sized>(&mut self, sampler: &S) -> Result<&HistoryRecord, MmclError> {
        let cfg = &self.state.train;
        let mut rng = self.state.rng.clone();
        let (x, t) = sampler.sample_pairs(cfg.batch_size, &mut rng)?;

        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let tv = tape.constant(t);
        let (zx, px) = self.state.f_x.net.forward_on_tape(&mut tape, xv);
        let (zt, pt) = self.state.f_t.net.forward_on_tape(&mut tape, tv);
        let loss_var = info_nce_on_tape(&mut tape, zx, zt, cfg.temperature, cfg.similarity)?;
        let loss = tape.value(loss_var).item();

        let fail = |state: &Checkpoint| MmclError::NonFiniteLoss {
            step: state.step,
            last_good: Box::new(state.clone()),
        };
        if !loss.is_finite() {
            return Err(fail(&self.state));
        }
        let grads = match tape.backward(loss_var) {
            Ok(g) => g,
            Err(NumericsError::NonFinite { .. }) => return Err(fail(&self.state)),
            Err(e) => return Err(e.into()),
        };
        let mut gx: Vec<Matrix> = px.iter().map(|&v| grads.wrt(&tape, v)).collect();
        let mut gt: Vec<Matrix> = pt.iter().map(|&v| grads.wrt(&tape, v)).collect();
        if gx.iter().chain(&gt).any(|g| !g.is_finite()) {
            return Err(fail(&self.state));
        }

        let diagnostic = if cfg.diagnostic_every > 0 && (self.state.step + 1) % cfg.diagnostic_every == 0 {
            Some(align_maxent_diagnostic(tape.value(zx), tape.value(zt))?)
        } else {
            None
        };

        // clip jointly over both encoders, then update each
        let n_x = gx.len();
        let mut all: Vec<Matrix> = gx.drain(..).chain(gt.drain(..)).collect();
        let norm = clip_global_norm(&mut all, cfg.clip_norm);
        let gt = all.split_off(n_x);
        let gx = all;
        let lr = cfg.lr_schedule.rate(cfg.lr, self.state.step, cfg.steps);
        self.state.adam_x.lr = lr;
        self.state.adam_t.lr = lr;
        self.state.adam_x.step(self.state.f_x.net.params_mut(), &gx)?;
        self.state.adam_t.step(self.state.f_t.net.params_mut(), &gt)?;

        self.state.rng = rng;
        let step = self.state.step;
        if step % 1000 == 0 {
            info!("step {step}: loss {loss:.5}, grad norm {norm:.3}");
        } else {
            debug!("step {step}: loss {loss:.5}, grad norm {norm:.3}");
        }
        self.state.history.push(HistoryRecord {
            step,
            loss,
            diagnostic,
        });
        self.state.step += 1;
        Ok(self.state.history.last().unwrap())
    }

    pub fn run<S: PairSampler + ?Sized>(mut self, sampler: &S) -> Result<TrainedPair, MmclError> {
        while !self.is_done() {
            self.step(sampler)?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> TrainedPair {
        TrainedPair {
            f_x: self.state.f_x,
            f_t: self.state.f_t,
            train: self.state.train,
            history: self.state.history,
        }
    }
}

/// Trains both encoders for `cfg.steps` steps on batches from `sampler`.
pub fn train<S: PairSampler + ?Sized>(
    sampler: &S,
    enc_x: &EncoderConfig,
    enc_t: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<TrainedPair, MmclError> {
    Trainer::new(enc_x, enc_t, cfg)?.run(sampler)
}

/// Columns `step, loss, alignment, entropy_x, entropy_t`; diagnostic cells
/// are empty on steps without a diagnostic.
pub fn write_history_csv<W: Write>(history: &[HistoryRecord], w: W) -> Result<(), MmclError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["step", "loss", "alignment", "entropy_x", "entropy_t"])?;
    for h in history {
        let (a, ex, et) = match h.diagnostic {
            Some(d) => (d.alignment.to_string(), d.entropy_x.to_string(), d.entropy_t.to_string()),
            None => Default::default(),
        };
        out.write_record([h.step.to_string(), h.loss.to_string(), a, ex, et])?;
    }
    out.flush()?;
    Ok(())
}

/// Means over consecutive non-overlapping windows; a trailing partial window
/// is dropped.
pub fn block_means(values: &[f64], window: usize) -> Vec<f64> {
    assert!(window > 0);
    values
        .chunks_exact(window)
        .map(|c| c.iter().sum::<f64>() / window as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small_encoders(dx: usize, dt: usize, n: usize) -> (EncoderConfig, EncoderConfig) {
        let mut a = EncoderConfig::new(dx, n);
        a.hidden_width = 16;
        a.n_layers = 3;
        let mut b = EncoderConfig::new(dt, n);
        b.hidden_width = 16;
        b.n_layers = 3;
        (a, b)
    }

    fn fixed_batch(k: usize) -> FixedBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x = Matrix::from_fn(k, 3, |_, _| rng.random_range(-1.0..1.0));
        let t = Matrix::from_fn(k, 2, |_, _| rng.random_range(-1.0..1.0));
        FixedBatch { x, t }
    }

    #[test]
    fn zero_steps_returns_initialized_encoders() {
        let (a, b) = small_encoders(3, 2, 2);
        let cfg = TrainConfig {
            steps: 0,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let out = train(&fixed_batch(4), &a, &b, &cfg).unwrap();
        assert!(out.history.is_empty());
        let again = Trainer::new(&a, &b, &cfg).unwrap().finish();
        assert_eq!(out.f_x, again.f_x);
    }

    #[test]
    fn overfits_a_fixed_batch() {
        let (a, b) = small_encoders(3, 2, 2);
        let cfg = TrainConfig {
            batch_size: 4,
            steps: 500,
            lr: 1e-2,
            diagnostic_every: 50,
            ..TrainConfig::default()
        };
        let out = train(&fixed_batch(4), &a, &b, &cfg).unwrap();
        assert_eq!(out.history.len(), 500);
        assert!(out.history.last().unwrap().loss < 4f64.ln());
        assert_eq!(out.history.iter().filter(|h| h.diagnostic.is_some()).count(), 10);
    }

    #[test]
    fn resume_from_checkpoint_is_bit_exact() {
        let (a, b) = small_encoders(3, 2, 2);
        let cfg = TrainConfig {
            batch_size: 4,
            steps: 20,
            lr: 1e-3,
            ..TrainConfig::default()
        };
        let full = train(&fixed_batch(4), &a, &b, &cfg).unwrap();
        let mut t = Trainer::new(&a, &b, &cfg).unwrap();
        for _ in 0..7 {
            t.step(&fixed_batch(4)).unwrap();
        }
        let json = t.checkpoint().to_json().unwrap();
        let resumed = Trainer::from_checkpoint(Checkpoint::from_json(&json).unwrap())
            .unwrap()
            .run(&fixed_batch(4))
            .unwrap();
        assert_eq!(resumed, full);
    }

    #[test]
    fn non_finite_loss_reports_step_and_last_good_state() {
        let (a, b) = small_encoders(3, 2, 2);
        let cfg = TrainConfig {
            batch_size: 4,
            steps: 10,
            ..TrainConfig::default()
        };
        let mut batch = fixed_batch(4);
        let mut t = Trainer::new(&a, &b, &cfg).unwrap();
        t.step(&batch).unwrap();
        t.step(&batch).unwrap();
        let before = t.checkpoint().clone();
        batch.x[(0, 0)] = f64::NAN;
        match t.step(&batch) {
            Err(MmclError::NonFiniteLoss { step, last_good }) => {
                assert_eq!(step, 2);
                assert_eq!(*last_good, before);
            }
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
        assert_eq!(t.checkpoint(), &before);
    }

    #[test]
    fn config_validation() {
        let (a, b) = small_encoders(3, 2, 2);
        for bad in [
            TrainConfig { batch_size: 1, ..TrainConfig::default() },
            TrainConfig { temperature: 0.0, ..TrainConfig::default() },
            TrainConfig { clip_norm: -1.0, ..TrainConfig::default() },
        ] {
            assert!(Trainer::new(&a, &b, &bad).is_err());
        }
        let (a, c) = small_encoders(3, 2, 3);
        let c = EncoderConfig { output_dim: 2, ..c };
        let a = EncoderConfig { output_dim: 3, ..a };
        assert!(Trainer::new(&a, &c, &TrainConfig::default()).is_err());
        assert!(Checkpoint::from_json(r#"{"version": 7}"#).is_err());
    }

    #[test]
    fn history_csv_layout() {
        let hist = vec![
            HistoryRecord { step: 0, loss: 1.5, diagnostic: None },
            HistoryRecord {
                step: 1,
                loss: 1.25,
                diagnostic: Some(Diagnostic { alignment: 0.5, entropy_x: 1.0, entropy_t: -1.0 }),
            },
        ];
        let mut buf = Vec::new();
        write_history_csv(&hist, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "step,loss,alignment,entropy_x,entropy_t\n0,1.5,,,\n1,1.25,0.5,1,-1\n"
        );
    }

    #[test]
    fn block_means_drop_the_tail() {
        assert_eq!(block_means(&[1.0, 3.0, 5.0, 7.0, 9.0], 2), vec![2.0, 6.0]);
    }
}
