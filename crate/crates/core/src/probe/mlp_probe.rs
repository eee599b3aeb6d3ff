use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ProbeError;
use crate::numerics::{Activation, AdamState, Matrix, Mlp, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpProbeConfig {
    pub hidden_width: usize,
    pub steps: usize,
    pub lr: f64,
    /// Minibatch size; the whole training set when larger than it.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpProbeConfig {
    fn default() -> Self {
        Self {
            hidden_width: 64,
            steps: 10_000,
            lr: 1e-3,
            batch_size: 256,
            seed: 0,
        }
    }
}

/// What the probe predicts.
#[derive(Clone, Debug, PartialEq)]
pub enum ProbeTarget<'a> {
    /// Real-valued targets, one column per output; squared-error loss.
    Regression(&'a Matrix),
    /// Integer class labels; softmax cross-entropy.
    Classification(&'a [usize]),
}

/// Per-column affine standardization learned from training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Scaler {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Scaler {
    fn fit(m: &Matrix) -> Self {
        let mean = m.column_means();
        let n = m.rows() as f64;
        let scale = (0..m.cols())
            .map(|c| {
                let var = m.column(c).iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>() / n;
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    fn apply(&self, m: &Matrix) -> Matrix {
        Matrix::from_fn(m.rows(), m.cols(), |r, c| (m[(r, c)] - self.mean[c]) / self.scale[c])
    }

    fn invert(&self, m: &Matrix) -> Matrix {
        Matrix::from_fn(m.rows(), m.cols(), |r, c| m[(r, c)] * self.scale[c] + self.mean[c])
    }
}

/// Two-layer perceptron probe (one hidden leaky-ReLU layer). Inputs, and for
/// regression the targets, are standardized with training statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpProbe {
    net: Mlp,
    x_scaler: Scaler,
    y_scaler: Option<Scaler>,
    pub final_loss: f64,
}

impl MlpProbe {
    /// Regression output in target units, or class logits.
    pub fn predict(&self, features: &Matrix) -> Matrix {
        let out = self.net.forward(&self.x_scaler.apply(features));
        match &self.y_scaler {
            Some(s) => s.invert(&out),
            None => out,
        }
    }

    pub fn predict_labels(&self, features: &Matrix) -> Vec<usize> {
        let logits = self.predict(features);
        (0..logits.rows())
            .map(|r| {
                let row = logits.row(r);
                (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap()
            })
            .collect()
    }
}

pub fn fit_mlp_probe(
    features: &Matrix,
    target: ProbeTarget<'_>,
    cfg: &MlpProbeConfig,
) -> Result<MlpProbe, ProbeError> {
    let n = features.rows();
    let (n_out, y_scaler, y_train, labels) = match target {
        ProbeTarget::Regression(y) => {
            if y.rows() != n {
                return Err(ProbeError::LengthMismatch { pred: n, target: y.rows() });
            }
            let s = Scaler::fit(y);
            (y.cols(), Some(s.clone()), Some(s.apply(y)), None)
        }
        ProbeTarget::Classification(l) => {
            if l.len() != n {
                return Err(ProbeError::LengthMismatch { pred: n, target: l.len() });
            }
            let k = l.iter().max().map_or(0, |m| m + 1);
            if l.iter().collect::<std::collections::BTreeSet<_>>().len() < 2 {
                return Err(ProbeError::SingleClass);
            }
            (k, None, None, Some(l))
        }
    };
    if n < 2 {
        return Err(ProbeError::TooFewSamples { needed: 2, found: n });
    }
    if cfg.hidden_width == 0 || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(ProbeError::InvalidConfig(format!("{cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x_scaler = Scaler::fit(features);
    let x = x_scaler.apply(features);
    let mut net = Mlp::new(
        &[features.cols(), cfg.hidden_width, n_out],
        Activation::LEAKY_0_2,
        Activation::Identity,
        &mut rng,
    );
    let mut adam = AdamState::new(net.params(), cfg.lr);
    let batch = cfg.batch_size.min(n);
    let mut idx: Vec<usize> = (0..batch).collect();
    let mut loss = f64::NAN;
    for step in 0..cfg.steps {
        if batch < n {
            idx.iter_mut().for_each(|i| *i = rng.random_range(0..n));
        }
        let mut tape = Tape::new();
        let xb = tape.constant(x.select_rows(&idx));
        let (out, params) = net.forward_on_tape(&mut tape, xb);
        let loss_var = match (&y_train, labels) {
            (Some(y), _) => {
                let yb = tape.constant(y.select_rows(&idx));
                let diff = tape.sub(out, yb);
                let sq = tape.square(diff);
                tape.mean(sq)
            }
            (None, Some(l)) => {
                let lb: Vec<usize> = idx.iter().map(|&i| l[i]).collect();
                tape.cross_entropy(out, &lb)
            }
            (None, None) => unreachable!(),
        };
        loss = tape.value(loss_var).item();
        if !loss.is_finite() {
            return Err(ProbeError::NonFiniteLoss { step });
        }
        let grads = tape.backward(loss_var)?;
        let g: Vec<Matrix> = params.iter().map(|&p| grads.wrt(&tape, p)).collect();
        adam.step(net.params_mut(), &g)?;
    }
    Ok(MlpProbe {
        net,
        x_scaler,
        y_scaler,
        final_loss: loss,
    })
}
