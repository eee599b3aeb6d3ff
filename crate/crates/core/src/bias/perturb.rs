use rand::Rng;
use rand_distr::StandardNormal;

use super::BiasSetting;
use crate::numerics::{linalg, Matrix, NumericsError};

/// Precompute noise factors for every perturbation pattern up to this many
/// perturbable coordinates; beyond it factors are computed per draw.
const CACHE_LIMIT: usize = 12;

/// Random text-side perturbation of the selected semantics.
///
/// For each sample a subset `A ⊆ I_ρ` is drawn by independent per-index coin
/// flips. Coordinates in `A` get additive Gaussian noise with covariance
/// `Σ_ε[A, A]`; every other coordinate is copied unchanged.
#[derive(Clone, Debug)]
pub struct Perturber {
    selected: Vec<usize>,
    /// Positions of `I_ρ` inside `I_θ`.
    positions: Vec<usize>,
    perturb_prob: f64,
    noise_cov: Matrix,
    factors: Vec<Option<Matrix>>,
}

impl Perturber {
    pub fn new(setting: &BiasSetting, noise_cov: Matrix) -> Result<Self, NumericsError> {
        let selected = setting.selected().to_vec();
        let positions: Vec<usize> = setting
            .perturbable()
            .iter()
            .map(|i| selected.iter().position(|s| s == i).expect("I_rho ⊆ I_theta"))
            .collect();
        let mut p = Self {
            selected,
            positions,
            perturb_prob: setting.perturb_prob,
            noise_cov,
            factors: Vec::new(),
        };
        if p.positions.len() <= CACHE_LIMIT {
            p.factors = (0..1u64 << p.positions.len())
                .map(|mask| p.factor(mask).map(Some))
                .collect::<Result<_, _>>()?;
        }
        Ok(p)
    }

    pub fn noise_cov(&self) -> &Matrix {
        &self.noise_cov
    }

    /// Cholesky factor of the noise covariance restricted to the coordinates in `mask`.
    fn factor(&self, mask: u64) -> Result<Matrix, NumericsError> {
        let idx = self.semantic_indices(mask);
        if idx.is_empty() {
            return Ok(Matrix::zeros(0, 0));
        }
        linalg::cholesky(&self.noise_cov.principal_submatrix(&idx))
    }

    /// 0-based semantic indices of the perturbable coordinates selected by `mask`.
    fn semantic_indices(&self, mask: u64) -> Vec<usize> {
        self.positions
            .iter()
            .enumerate()
            .filter(|(bit, _)| mask >> bit & 1 == 1)
            .map(|(_, &pos)| self.selected[pos] - 1)
            .collect()
    }

    /// Perturbs one vector `s_{I_θ}`; also returns the bitmask of `A` over `I_ρ`.
    pub fn perturb_with_mask<R: Rng + ?Sized>(&self, s_theta: &[f64], rng: &mut R) -> (Vec<f64>, u64) {
        assert_eq!(s_theta.len(), self.selected.len(), "s_theta dimension");
        let mut out = s_theta.to_vec();
        if self.positions.is_empty() || self.perturb_prob == 0.0 {
            return (out, 0);
        }
        let mut mask = 0u64;
        for bit in 0..self.positions.len() {
            if rng.random_bool(self.perturb_prob) {
                mask |= 1 << bit;
            }
        }
        if mask == 0 {
            return (out, 0);
        }
        let computed;
        let l = match self.factors.get(mask as usize) {
            Some(Some(f)) => f,
            _ => {
                computed = self.factor(mask).expect("noise covariance is positive definite");
                &computed
            }
        };
        let z: Vec<f64> = (0..l.rows()).map(|_| rng.sample(StandardNormal)).collect();
        let targets = self
            .positions
            .iter()
            .enumerate()
            .filter(|(bit, _)| mask >> bit & 1 == 1)
            .map(|(_, &pos)| pos);
        for (i, pos) in targets.enumerate() {
            let noise: f64 = (0..=i).map(|k| l[(i, k)] * z[k]).sum();
            out[pos] += noise;
        }
        (out, mask)
    }

    pub fn perturb<R: Rng + ?Sized>(&self, s_theta: &[f64], rng: &mut R) -> Vec<f64> {
        self.perturb_with_mask(s_theta, rng).0
    }

    /// Row-wise [`Perturber::perturb`] over a batch.
    pub fn perturb_batch<R: Rng + ?Sized>(&self, s_theta: &Matrix, rng: &mut R) -> Matrix {
        let mut out = s_theta.clone();
        for r in 0..s_theta.rows() {
            let p = self.perturb(s_theta.row(r), rng);
            out.row_mut(r).copy_from_slice(&p);
        }
        out
    }
}
