use rand::Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::numerics::{linalg, Matrix};

/// Cap on weight resampling when a draw is too ill-conditioned.
pub const MAX_RESAMPLES: usize = 1000;
pub const DEFAULT_RCOND_FLOOR: f64 = 1e-3;
pub const DEFAULT_GENERATOR_LAYERS: usize = 3;

/// Strictly increasing elementwise map with a closed-form inverse.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InvertibleActivation {
    Identity,
    LeakyRelu {
        slope: f64,
    },
    /// Hyperbolic blend of the two leaky-rectifier branches:
    /// `f(x) = ((1+α)x + (1−α)(√(x²+c²) − c)) / 2`.
    /// Slope tends to `α` as `x → −∞` and to 1 as `x → ∞`; `f(0) = 0`.
    SmoothLeaky {
        slope: f64,
        width: f64,
    },
}

impl Default for InvertibleActivation {
    fn default() -> Self {
        InvertibleActivation::SmoothLeaky {
            slope: 0.2,
            width: 1.0,
        }
    }
}

impl InvertibleActivation {
    pub fn forward(self, x: f64) -> f64 {
        match self {
            Self::Identity => x,
            Self::LeakyRelu { slope } => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Self::SmoothLeaky { slope, width } => {
                let a = 0.5 * (1.0 + slope);
                let b = 0.5 * (1.0 - slope);
                a * x + b * ((x * x + width * width).sqrt() - width)
            }
        }
    }

    pub fn inverse(self, y: f64) -> f64 {
        match self {
            Self::Identity => y,
            Self::LeakyRelu { slope } => {
                if y >= 0.0 {
                    y
                } else {
                    y / slope
                }
            }
            Self::SmoothLeaky { slope, width } => {
                // (y' - a x)^2 = b^2 (x^2 + c^2) with y' = y + b c; take the root
                // on the branch where y' - a x ≥ 0.
                let a = 0.5 * (1.0 + slope);
                let b = 0.5 * (1.0 - slope);
                let yp = y + b * width;
                (a * yp - b * (yp * yp + slope * width * width).sqrt()) / slope
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvertibleLayer {
    /// Acts on column vectors: `h ↦ W h + b`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Random diffeomorphism `ℝ^d → ℝ^d` built from square, well-conditioned
/// dense layers with an invertible activation between consecutive layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvertibleMlp {
    pub layers: Vec<InvertibleLayer>,
    pub activation: InvertibleActivation,
    pub rcond_floor: f64,
}

/// Draws a generator. Each weight matrix is resampled until `σ_min/σ_max ≥ rcond_floor`.
pub fn build_invertible_mlp<R: Rng + ?Sized>(
    dim: usize,
    n_layers: usize,
    activation: InvertibleActivation,
    rcond_floor: f64,
    rng: &mut R,
) -> Result<InvertibleMlp, ModelError> {
    if dim == 0 || n_layers == 0 {
        return Err(ModelError::InvalidSpec(
            "generator needs dim ≥ 1 and n_layers ≥ 1".into(),
        ));
    }
    if !(rcond_floor > 0.0 && rcond_floor < 1.0) {
        return Err(ModelError::InvalidSpec(format!(
            "rcond floor {rcond_floor} outside (0, 1)"
        )));
    }
    let scale = 1.0 / (dim as f64).sqrt();
    let bias_dist = Normal::new(0.0, 0.1).unwrap();
    let mut layers = Vec::with_capacity(n_layers);
    for layer in 0..n_layers {
        let mut accepted = None;
        for _ in 0..MAX_RESAMPLES {
            let w = Matrix::from_fn(dim, dim, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
            if linalg::reciprocal_condition(&w) >= rcond_floor {
                accepted = Some(w);
                break;
            }
        }
        let weight = accepted.ok_or(ModelError::GenerationFailure {
            layer,
            attempts: MAX_RESAMPLES,
        })?;
        let bias = (0..dim).map(|_| rng.sample(bias_dist)).collect();
        layers.push(InvertibleLayer { weight, bias });
    }
    Ok(InvertibleMlp {
        layers,
        activation,
        rcond_floor,
    })
}

impl InvertibleMlp {
    pub fn dim(&self) -> usize {
        self.layers[0].bias.len()
    }

    pub fn min_reciprocal_condition(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| linalg::reciprocal_condition(&l.weight))
            .fold(f64::INFINITY, f64::min)
    }

    /// Maps a batch of latents (one per row) to observations.
    pub fn apply(&self, latents: &Matrix) -> Result<Matrix, ModelError> {
        if latents.cols() != self.dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.dim(),
                found: latents.cols(),
            });
        }
        let n = self.layers.len();
        let mut h = latents.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.matmul_t(&layer.weight).add_row(&layer.bias);
            if i + 1 < n {
                let act = self.activation;
                h = h.map(|v| act.forward(v));
            }
        }
        Ok(h)
    }

    /// Exact layer-by-layer inverse of [`InvertibleMlp::apply`].
    pub fn invert(&self, obs: &Matrix) -> Result<Matrix, ModelError> {
        if obs.cols() != self.dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.dim(),
                found: obs.cols(),
            });
        }
        let n = self.layers.len();
        let mut h = obs.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if i + 1 < n {
                let act = self.activation;
                h = h.map(|v| act.inverse(v));
            }
            let neg_bias: Vec<f64> = layer.bias.iter().map(|b| -b).collect();
            let centered = h.add_row(&neg_bias);
            // W hᵀ = (y - b)ᵀ, solved for all rows at once
            h = linalg::solve(&layer.weight, &centered.transpose())?.transpose();
        }
        Ok(h)
    }
}
