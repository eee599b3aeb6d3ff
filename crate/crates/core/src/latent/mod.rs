//! Latent variables, their Gaussian priors, and the invertible maps that turn
//! them into paired observations.

mod covariance;
mod generator;
mod model;

pub use covariance::{sample_covariance, wishart_identity_scale, CovarianceKind, CovarianceSpec};
pub use generator::{
    build_invertible_mlp, InvertibleActivation, InvertibleLayer, InvertibleMlp,
    DEFAULT_GENERATOR_LAYERS, DEFAULT_RCOND_FLOOR, MAX_RESAMPLES,
};
pub use model::{GenerativeModel, GeneratorConfig, PairBatch, MODEL_FORMAT_VERSION};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bias::BiasError;
use crate::numerics::{linalg, Matrix, NumericsError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("latent dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("layer {layer}: no well-conditioned weight after {attempts} draws")]
    GenerationFailure { layer: usize, attempts: usize },
    #[error("semantic index {index} outside 1..={n_s}")]
    IndexOutOfRange { index: usize, n_s: usize },
    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u32),
    #[error(transparent)]
    Bias(#[from] BiasError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Dimensions and covariance structure of `(s, m_x, m_t)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentSpec {
    pub n_s: usize,
    pub dim_mx: usize,
    pub dim_mt: usize,
    pub cov_s: CovarianceSpec,
    pub cov_mx: CovarianceSpec,
    pub cov_mt: CovarianceSpec,
}

impl LatentSpec {
    /// `Σ_s = I`, modality-specific covariances from `W_5(I, 5)`.
    pub fn independent() -> Self {
        Self {
            n_s: 10,
            dim_mx: 5,
            dim_mt: 5,
            cov_s: CovarianceSpec::identity(10),
            cov_mx: CovarianceSpec::wishart(5, 5),
            cov_mt: CovarianceSpec::wishart(5, 5),
        }
    }

    /// `Σ_s ~ W_10(I, 10)`.
    pub fn dependent() -> Self {
        Self {
            cov_s: CovarianceSpec::wishart(10, 10),
            ..Self::independent()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_s < 2 || self.dim_mx == 0 || self.dim_mt == 0 {
            return Err(ModelError::InvalidSpec(
                "need n_s ≥ 2 and non-empty modality-specific blocks".into(),
            ));
        }
        for (spec, dim, name) in [
            (&self.cov_s, self.n_s, "cov_s"),
            (&self.cov_mx, self.dim_mx, "cov_mx"),
            (&self.cov_mt, self.dim_mt, "cov_mt"),
        ] {
            spec.validate()?;
            if spec.dim != dim {
                return Err(ModelError::InvalidSpec(format!(
                    "{name} has dimension {} but the block has {dim}",
                    spec.dim
                )));
            }
        }
        Ok(())
    }
}

/// Realized Gaussian prior with cached Cholesky factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentPrior {
    pub spec: LatentSpec,
    pub cov_s: Matrix,
    pub cov_mx: Matrix,
    pub cov_mt: Matrix,
    #[serde(skip)]
    factors: Option<[Matrix; 3]>,
}

impl LatentPrior {
    pub fn realize<R: Rng + ?Sized>(spec: &LatentSpec, rng: &mut R) -> Result<Self, ModelError> {
        spec.validate()?;
        let cov_s = sample_covariance(&spec.cov_s, rng)?;
        let cov_mx = sample_covariance(&spec.cov_mx, rng)?;
        let cov_mt = sample_covariance(&spec.cov_mt, rng)?;
        Self::from_covariances(spec.clone(), cov_s, cov_mx, cov_mt)
    }

    pub fn from_covariances(
        spec: LatentSpec,
        cov_s: Matrix,
        cov_mx: Matrix,
        cov_mt: Matrix,
    ) -> Result<Self, ModelError> {
        let factors = [
            linalg::cholesky(&cov_s)?,
            linalg::cholesky(&cov_mx)?,
            linalg::cholesky(&cov_mt)?,
        ];
        Ok(Self {
            spec,
            cov_s,
            cov_mx,
            cov_mt,
            factors: Some(factors),
        })
    }

    fn factors(&self) -> [Matrix; 3] {
        match &self.factors {
            Some(f) => f.clone(),
            None => [&self.cov_s, &self.cov_mx, &self.cov_mt]
                .map(|c| linalg::cholesky(c).expect("validated covariance")),
        }
    }
}

/// One draw of `(s, m_x, m_t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticSample {
    pub s: Vec<f64>,
    pub m_x: Vec<f64>,
    pub m_t: Vec<f64>,
}

/// `n` draws stored block-wise, one sample per row.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBatch {
    pub s: Matrix,
    pub m_x: Matrix,
    pub m_t: Matrix,
}

impl LatentBatch {
    pub fn len(&self) -> usize {
        self.s.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.s.rows() == 0
    }

    pub fn sample(&self, i: usize) -> SemanticSample {
        SemanticSample {
            s: self.s.row(i).to_vec(),
            m_x: self.m_x.row(i).to_vec(),
            m_t: self.m_t.row(i).to_vec(),
        }
    }
}

fn gaussian_block<R: Rng + ?Sized>(n: usize, factor: &Matrix, rng: &mut R) -> Matrix {
    let d = factor.rows();
    let z = Matrix::from_fn(n, d, |_, _| rng.sample(StandardNormal));
    z.matmul_t(factor)
}

/// Draws `n` i.i.d. latent samples; the three blocks are mutually independent.
pub fn sample_latents<R: Rng + ?Sized>(prior: &LatentPrior, rng: &mut R, n: usize) -> LatentBatch {
    let [ls, lmx, lmt] = prior.factors();
    LatentBatch {
        s: gaussian_block(n, &ls, rng),
        m_x: gaussian_block(n, &lmx, rng),
        m_t: gaussian_block(n, &lmt, rng),
    }
}

/// Skewed heavy-tailed shift `s_i ↦ 2·sign(s_i)·|s_i|²` on the listed 1-based dims.
pub fn ood_shift(s: &[f64], dims: &[usize]) -> Result<Vec<f64>, ModelError> {
    let mut out = s.to_vec();
    for &d in dims {
        if d == 0 || d > s.len() {
            return Err(ModelError::IndexOutOfRange {
                index: d,
                n_s: s.len(),
            });
        }
        let v = s[d - 1];
        out[d - 1] = 2.0 * v.signum() * v * v;
    }
    Ok(out)
}

pub fn ood_shift_batch(s: &Matrix, dims: &[usize]) -> Result<Matrix, ModelError> {
    let mut out = s.clone();
    for r in 0..s.rows() {
        let shifted = ood_shift(s.row(r), dims)?;
        out.row_mut(r).copy_from_slice(&shifted);
    }
    Ok(out)
}
