use serde::{Deserialize, Serialize};

use super::{Matrix, NumericsError};

/// Adam optimizer state with bias-corrected moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// First moment (mean of gradients), one entry per parameter tensor.
    pub m: Vec<Matrix>,
    /// Second moment (mean of squared gradients).
    pub v: Vec<Matrix>,
}

impl AdamState {
    /// Fresh state for parameters shaped like `params`, with the usual
    /// `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn new(params: &[Matrix], lr: f64) -> Self {
        Self::with_betas(params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &[Matrix], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Matrix> = params
            .iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            step: 0,
            lr,
            beta1,
            beta2,
            eps,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) -> Result<(), NumericsError> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(NumericsError::ShapeMismatch {
                context: "adam_step parameter count",
                expected: (self.m.len(), 1),
                found: (params.len().max(grads.len()), 1),
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(NumericsError::ShapeMismatch {
                    context: "adam_step",
                    expected: m.shape(),
                    found: g.shape(),
                });
            }
            if !g.is_finite() {
                return Err(NumericsError::NonFiniteGradient);
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pi, &gi), mi), vi) in p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` jointly so their global 2-norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Matrix], max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = grads
        .iter()
        .flat_map(|g| g.as_slice())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.as_mut_slice() {
                *v *= k;
            }
        }
    }
    norm
}
