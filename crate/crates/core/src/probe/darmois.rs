use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::ProbeError;
use crate::numerics::{linalg, Matrix};

fn std_normal() -> Normal {
    Normal::standard()
}

/// One step of the construction: `s_i | s_P ~ N(β·s_P, σ²)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Conditional {
    coord: usize,
    preceding: Vec<usize>,
    beta: Vec<f64>,
    sigma: f64,
}

/// Maps a zero-mean Gaussian vector to the unit cube by chaining conditional
/// CDFs, `u_i = Φ((s_i − E[s_i | s_{<i}]) / sd(s_i | s_{<i}))`, in the given
/// coordinate order. Conditional moments come from Schur complements of the
/// covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DarmoisMap {
    pub covariance: Matrix,
    /// 0-based coordinate order; output `i` corresponds to `ordering[i]`.
    pub ordering: Vec<usize>,
    steps: Vec<Conditional>,
}

impl DarmoisMap {
    pub fn new(covariance: &Matrix, ordering: &[usize]) -> Result<Self, ProbeError> {
        let n = covariance.rows();
        if covariance.cols() != n {
            return Err(ProbeError::InvalidConfig("covariance must be square".into()));
        }
        let mut sorted = ordering.to_vec();
        sorted.sort_unstable();
        if sorted != (0..n).collect::<Vec<_>>() {
            return Err(ProbeError::InvalidConfig(format!(
                "ordering {ordering:?} is not a permutation of 0..{n}"
            )));
        }
        linalg::cholesky(covariance).map_err(|_| ProbeError::NotPositiveDefinite)?;
        let mut steps = Vec::with_capacity(n);
        for (k, &i) in ordering.iter().enumerate() {
            let preceding = ordering[..k].to_vec();
            let (beta, var) = if preceding.is_empty() {
                (Vec::new(), covariance[(i, i)])
            } else {
                let spp = covariance.principal_submatrix(&preceding);
                let spi = Matrix::from_fn(preceding.len(), 1, |r, _| covariance[(preceding[r], i)]);
                let beta = linalg::solve(&spp, &spi)?;
                let explained: f64 = (0..preceding.len()).map(|r| spi[(r, 0)] * beta[(r, 0)]).sum();
                (beta.into_vec(), covariance[(i, i)] - explained)
            };
            if !(var > 0.0) {
                return Err(ProbeError::NotPositiveDefinite);
            }
            steps.push(Conditional {
                coord: i,
                preceding,
                beta,
                sigma: var.sqrt(),
            });
        }
        Ok(Self {
            covariance: covariance.clone(),
            ordering: ordering.to_vec(),
            steps,
        })
    }

    /// Natural coordinate order.
    pub fn in_order(covariance: &Matrix) -> Result<Self, ProbeError> {
        Self::new(covariance, &(0..covariance.rows()).collect::<Vec<_>>())
    }

    pub fn dim(&self) -> usize {
        self.ordering.len()
    }

    /// Standardized residuals `(s_i − E[s_i | s_{<i}]) / sd`, before `Φ`.
    pub fn residuals(&self, s: &[f64]) -> Vec<f64> {
        assert_eq!(s.len(), self.dim(), "Darmois input dimension");
        self.steps
            .iter()
            .map(|c| {
                let mean: f64 = c.preceding.iter().zip(&c.beta).map(|(&p, b)| b * s[p]).sum();
                (s[c.coord] - mean) / c.sigma
            })
            .collect()
    }

    pub fn apply(&self, s: &[f64]) -> Vec<f64> {
        let phi = std_normal();
        self.residuals(s).into_iter().map(|z| phi.cdf(z)).collect()
    }

    pub fn apply_batch(&self, s: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(s.rows(), self.dim());
        for r in 0..s.rows() {
            out.row_mut(r).copy_from_slice(&self.apply(s.row(r)));
        }
        out
    }

    /// Inverts the map by solving the chain front to back.
    pub fn invert(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.dim());
        let phi = std_normal();
        let mut s = vec![0.0; self.dim()];
        for (c, &ui) in self.steps.iter().zip(u) {
            let mean: f64 = c.preceding.iter().zip(&c.beta).map(|(&p, b)| b * s[p]).sum();
            s[c.coord] = mean + c.sigma * phi.inverse_cdf(ui);
        }
        s
    }
}
