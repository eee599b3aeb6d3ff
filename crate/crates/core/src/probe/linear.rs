use serde::{Deserialize, Serialize};

use super::ProbeError;
use crate::numerics::{linalg, Matrix, NumericsError};

pub const RIDGE: f64 = 1e-8;

/// Affine map `y = x·W + b` fitted by least squares.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    /// `features × outputs`.
    pub weights: Matrix,
    pub intercept: Vec<f64>,
}

impl LinearProbe {
    pub fn predict(&self, features: &Matrix) -> Matrix {
        features.matmul(&self.weights).add_row(&self.intercept)
    }
}

/// Ordinary least squares on centred data with a `1e-8` ridge on the normal
/// equations. `targets` may have several columns; each is fitted independently.
pub fn fit_linear_probe(features: &Matrix, targets: &Matrix) -> Result<LinearProbe, ProbeError> {
    let (n, d) = features.shape();
    if targets.rows() != n {
        return Err(ProbeError::LengthMismatch {
            pred: n,
            target: targets.rows(),
        });
    }
    if n < d + 1 {
        return Err(ProbeError::TooFewSamples { needed: d + 1, found: n });
    }
    if !features.is_finite() || !targets.is_finite() {
        return Err(ProbeError::Singular);
    }
    let mx = features.column_means();
    let my = targets.column_means();
    let xc = features.add_row(&mx.iter().map(|v| -v).collect::<Vec<_>>());
    let yc = targets.add_row(&my.iter().map(|v| -v).collect::<Vec<_>>());
    let mut gram = xc.t_matmul(&xc);
    for i in 0..d {
        gram[(i, i)] += RIDGE;
    }
    let rhs = xc.t_matmul(&yc);
    let singular = |e: NumericsError| match e {
        NumericsError::NotPositiveDefinite | NumericsError::Singular => ProbeError::Singular,
        other => other.into(),
    };
    linalg::cholesky(&gram).map_err(singular)?;
    let weights = linalg::solve(&gram, &rhs).map_err(singular)?;
    if !weights.is_finite() {
        return Err(ProbeError::Singular);
    }
    let shift = Matrix::row_vector(&mx).matmul(&weights);
    let intercept = my.iter().zip(shift.row(0)).map(|(a, b)| a - b).collect();
    Ok(LinearProbe { weights, intercept })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::r_squared;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn recovers_a_line() {
        let x = Matrix::column_vector(&[0.0, 1.0, 2.5, -3.0, 7.0]);
        let y = x.map(|v| 2.0 * v + 1.0);
        let p = fit_linear_probe(&x, &y).unwrap();
        assert!((p.weights[(0, 0)] - 2.0).abs() < 1e-8);
        assert!((p.intercept[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn exact_linear_targets_fit_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Matrix::from_fn(500, 4, |_, _| rng.sample(StandardNormal));
        let w = Matrix::column_vector(&[0.5, -1.0, 2.0, 0.25]);
        let y = x.matmul(&w).add_row(&[-3.0]);
        let p = fit_linear_probe(&x, &y).unwrap();
        let pred = p.predict(&x);
        let ss_res: f64 = pred.sub(&y).as_slice().iter().map(|v| v * v).sum();
        let mean = y.sum() / 500.0;
        let ss_tot: f64 = y.as_slice().iter().map(|v| (v - mean) * (v - mean)).sum();
        assert!(ss_res / ss_tot < 1e-10);
    }

    #[test]
    fn noise_targets_score_zero_out_of_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::from_fn(4000, 3, |_, _| rng.sample(StandardNormal));
        let y = Matrix::from_fn(4000, 1, |_, _| rng.sample(StandardNormal));
        let p = fit_linear_probe(&x.slice_rows(0, 2000), &y.slice_rows(0, 2000)).unwrap();
        let pred = p.predict(&x.slice_rows(2000, 4000));
        let r2 = r_squared(pred.as_slice(), y.slice_rows(2000, 4000).as_slice()).unwrap();
        assert!(r2 < 0.01, "{r2}");
    }

    #[test]
    fn invariant_under_invertible_feature_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Matrix::from_fn(300, 3, |_, _| rng.sample(StandardNormal));
        let y = Matrix::from_fn(300, 1, |r, _| x[(r, 0)].sin() + x[(r, 2)]);
        let a = Matrix::from_rows(&[[2.0, 0.3, 0.0], [-1.0, 1.0, 0.5], [0.0, 0.2, 3.0]]);
        let xa = x.matmul(&a);
        let p1 = fit_linear_probe(&x, &y).unwrap().predict(&x);
        let p2 = fit_linear_probe(&xa, &y).unwrap().predict(&xa);
        assert!(p1.sub(&p2).max_abs() < 1e-8);
    }

    #[test]
    fn too_few_samples() {
        let x = Matrix::zeros(3, 3);
        assert!(matches!(
            fit_linear_probe(&x, &Matrix::zeros(3, 1)),
            Err(ProbeError::TooFewSamples { needed: 4, found: 3 })
        ));
        let mut x = Matrix::zeros(10, 2);
        x[(0, 0)] = f64::NAN;
        assert!(matches!(fit_linear_probe(&x, &Matrix::zeros(10, 1)), Err(ProbeError::Singular)));
    }
}
