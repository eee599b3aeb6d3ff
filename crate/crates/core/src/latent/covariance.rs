use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    Identity,
    Wishart,
}

/// How a covariance matrix is obtained: fixed identity, or one draw from
/// the Wishart distribution `W_dim(I, dof)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub kind: CovarianceKind,
    pub dim: usize,
    /// Degrees of freedom; only read for `Wishart`.
    #[serde(default)]
    pub dof: usize,
    /// Pins the draw independently of the caller's RNG stream when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl CovarianceSpec {
    pub fn identity(dim: usize) -> Self {
        Self {
            kind: CovarianceKind::Identity,
            dim,
            dof: dim,
            seed: None,
        }
    }

    pub fn wishart(dim: usize, dof: usize) -> Self {
        Self {
            kind: CovarianceKind::Wishart,
            dim,
            dof,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.dim == 0 {
            return Err(ModelError::InvalidSpec("covariance dimension must be ≥ 1".into()));
        }
        if self.kind == CovarianceKind::Wishart && self.dof < self.dim {
            return Err(ModelError::InvalidSpec(format!(
                "Wishart degrees of freedom {} < dimension {}",
                self.dof, self.dim
            )));
        }
        Ok(())
    }
}

/// Realizes a covariance matrix from its spec.
pub fn sample_covariance<R: Rng + ?Sized>(spec: &CovarianceSpec, rng: &mut R) -> Result<Matrix, ModelError> {
    spec.validate()?;
    match spec.kind {
        CovarianceKind::Identity => Ok(Matrix::identity(spec.dim)),
        CovarianceKind::Wishart => Ok(match spec.seed {
            Some(seed) => wishart_identity_scale(spec.dim, spec.dof, &mut ChaCha8Rng::seed_from_u64(seed)),
            None => wishart_identity_scale(spec.dim, spec.dof, rng),
        }),
    }
}

/// Bartlett decomposition: `W = A Aᵀ` with `A` lower triangular,
/// `A_ii = sqrt(χ²_{dof − i})` and standard normal entries below the diagonal.
pub fn wishart_identity_scale<R: Rng + ?Sized>(dim: usize, dof: usize, rng: &mut R) -> Matrix {
    let mut a = Matrix::zeros(dim, dim);
    for i in 0..dim {
        let chi2 = ChiSquared::new((dof - i) as f64).expect("positive degrees of freedom");
        a[(i, i)] = chi2.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let mut w = a.matmul_t(&a);
    // exact symmetry
    for i in 0..dim {
        for j in 0..i {
            let v = 0.5 * (w[(i, j)] + w[(j, i)]);
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    w
}
