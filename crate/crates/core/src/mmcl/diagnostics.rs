use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};
use std::f64::consts::PI;

use super::MmclError;
use crate::numerics::Matrix;

/// Alignment and per-modality entropy of a batch of paired embeddings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub alignment: f64,
    pub entropy_x: f64,
    pub entropy_t: f64,
}

/// Mean (unsquared) distance between paired rows.
pub fn alignment(zx: &Matrix, zt: &Matrix) -> Result<f64, MmclError> {
    if zx.shape() != zt.shape() {
        return Err(MmclError::ShapeMismatch {
            zx: zx.shape(),
            zt: zt.shape(),
        });
    }
    if zx.rows() == 0 {
        return Ok(0.0);
    }
    let total: f64 = (0..zx.rows())
        .map(|i| {
            zx.row(i)
                .iter()
                .zip(zt.row(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / zx.rows() as f64)
}

/// Kozachenko–Leonenko nearest-neighbour estimate of differential entropy
/// (nats), with `k = 1`:
/// `ψ(N) − ψ(1) + ln V_d + (d/N) Σ ln ε_i`.
///
/// Exact duplicates are skipped when searching for the nearest neighbour;
/// a sample whose every neighbour coincides with it is an error.
pub fn knn_entropy(z: &Matrix) -> Result<f64, MmclError> {
    let (n, d) = z.shape();
    if n < 2 {
        return Err(MmclError::EntropyUndefined(n));
    }
    let mut sum_log = 0.0;
    for i in 0..n {
        let zi = z.row(i);
        let mut best = f64::INFINITY;
        for j in 0..n {
            if j == i {
                continue;
            }
            let mut dist = 0.0;
            for (a, b) in zi.iter().zip(z.row(j)) {
                dist += (a - b) * (a - b);
                if dist >= best {
                    break;
                }
            }
            if dist > 0.0 && dist < best {
                best = dist;
            }
        }
        if !best.is_finite() {
            return Err(MmclError::EntropyUndefined(n));
        }
        sum_log += 0.5 * best.ln();
    }
    let d = d as f64;
    let ln_unit_ball = 0.5 * d * PI.ln() - ln_gamma(0.5 * d + 1.0);
    Ok(digamma(n as f64) - digamma(1.0) + ln_unit_ball + d * sum_log / n as f64)
}

/// Alignment term plus the entropy of each embedding cloud. Computed on
/// plain values; nothing here is differentiated.
pub fn align_maxent_diagnostic(zx: &Matrix, zt: &Matrix) -> Result<Diagnostic, MmclError> {
    let alignment = alignment(zx, zt)?;
    Ok(Diagnostic {
        alignment,
        entropy_x: knn_entropy(zx)?,
        entropy_t: knn_entropy(zt)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn alignment_of_identical_batches_is_zero() {
        let z = Matrix::from_fn(5, 3, |i, j| (i * j) as f64);
        let d = align_maxent_diagnostic(&z, &z).unwrap();
        assert_eq!(d.alignment, 0.0);
        assert_eq!(d.entropy_x, d.entropy_t);
        let w = z.add(&Matrix::filled(5, 3, 0.0).add_row(&[3.0, 4.0, 0.0]));
        assert!((alignment(&z, &w).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_cube_has_zero_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = Matrix::from_fn(10_000, 2, |_, _| rng.random::<f64>());
        let h = knn_entropy(&z).unwrap();
        assert!(h.abs() < 0.1, "{h}");
    }

    #[test]
    fn standard_normal_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z = Matrix::from_fn(10_000, 1, |_, _| rng.sample(StandardNormal));
        let h = knn_entropy(&z).unwrap();
        let want = 0.5 * (2.0 * PI * std::f64::consts::E).ln();
        assert!((h - want).abs() < 0.05, "{h} vs {want}");
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            knn_entropy(&Matrix::zeros(1, 2)),
            Err(MmclError::EntropyUndefined(1))
        ));
        assert!(knn_entropy(&Matrix::zeros(4, 2)).is_err());
    }
}
