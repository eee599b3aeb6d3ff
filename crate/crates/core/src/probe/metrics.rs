use log::warn;

use super::ProbeError;
use crate::numerics::Matrix;

fn check_lengths(pred: usize, target: usize) -> Result<(), ProbeError> {
    if pred != target {
        return Err(ProbeError::LengthMismatch { pred, target });
    }
    if target < 2 {
        return Err(ProbeError::TooFewSamples { needed: 2, found: target });
    }
    Ok(())
}

/// Coefficient of determination `1 − SS_res / SS_tot`, clipped to `[0, 1]`.
/// A constant target has no variance to explain and scores 0.
pub fn r_squared(pred: &[f64], target: &[f64]) -> Result<f64, ProbeError> {
    check_lengths(pred.len(), target.len())?;
    let mean = target.iter().sum::<f64>() / target.len() as f64;
    let ss_tot: f64 = target.iter().map(|y| (y - mean) * (y - mean)).sum();
    if ss_tot <= 0.0 {
        warn!("r_squared: target has zero variance, scoring 0");
        return Ok(0.0);
    }
    let ss_res: f64 = pred.iter().zip(target).map(|(p, y)| (p - y) * (p - y)).sum();
    let r2 = 1.0 - ss_res / ss_tot;
    Ok(if r2.is_nan() { 0.0 } else { r2.clamp(0.0, 1.0) })
}

/// Mean of the per-column [`r_squared`] for a multivariate target.
pub fn mean_r_squared(pred: &Matrix, target: &Matrix) -> Result<f64, ProbeError> {
    if pred.shape() != target.shape() {
        return Err(ProbeError::LengthMismatch {
            pred: pred.len(),
            target: target.len(),
        });
    }
    let mut total = 0.0;
    for c in 0..target.cols() {
        total += r_squared(&pred.column(c), &target.column(c))?;
    }
    Ok(total / target.cols() as f64)
}

/// Multiclass Matthews correlation (Gorodkin's `R_K`), which is the usual
/// MCC for two classes. Returns 0 when the prediction is constant.
pub fn mcc(pred: &[usize], truth: &[usize]) -> Result<f64, ProbeError> {
    check_lengths(pred.len(), truth.len())?;
    let k = pred.iter().chain(truth).max().unwrap() + 1;
    let mut t = vec![0f64; k];
    let mut p = vec![0f64; k];
    let mut correct = 0f64;
    for (&a, &b) in pred.iter().zip(truth) {
        p[a] += 1.0;
        t[b] += 1.0;
        if a == b {
            correct += 1.0;
        }
    }
    if t.iter().filter(|&&c| c > 0.0).count() < 2 {
        return Err(ProbeError::SingleClass);
    }
    let s = truth.len() as f64;
    let pt: f64 = p.iter().zip(&t).map(|(a, b)| a * b).sum();
    let pp: f64 = p.iter().map(|a| a * a).sum();
    let tt: f64 = t.iter().map(|a| a * a).sum();
    let denom = ((s * s - pp) * (s * s - tt)).sqrt();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(((correct * s - pt) / denom).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn r_squared_examples() {
        let y = [1.0, 2.0, 4.0, 8.0];
        assert_eq!(r_squared(&y, &y).unwrap(), 1.0);
        assert_eq!(r_squared(&[3.75; 4], &y).unwrap(), 0.0);
        let anti: Vec<f64> = y.iter().map(|v| -v).collect();
        assert_eq!(r_squared(&anti, &y).unwrap(), 0.0);
        assert_eq!(r_squared(&[1.0, 2.0], &[5.0, 5.0]).unwrap(), 0.0);
        // SS_res = 0.25 + 0.25, SS_tot = 7.5625 + 3.0625 + 0.0625 + 18.0625
        let p = [1.5, 2.0, 4.5, 8.0];
        assert!((r_squared(&p, &y).unwrap() - (1.0 - 0.5 / 28.75)).abs() < 1e-12);
        assert!(r_squared(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mcc_examples() {
        let truth = [0, 1, 1, 0, 1];
        assert_eq!(mcc(&truth, &truth).unwrap(), 1.0);
        let inv: Vec<usize> = truth.iter().map(|v| 1 - v).collect();
        assert!((mcc(&inv, &truth).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(mcc(&[0, 1], &[1, 1]), Err(ProbeError::SingleClass)));
        assert_eq!(mcc(&[0, 0, 0], &[0, 1, 0]).unwrap(), 0.0);
        // three-class perfect prediction
        assert_eq!(mcc(&[0, 2, 1, 2], &[0, 2, 1, 2]).unwrap(), 1.0);
    }

    #[test]
    fn mcc_binary_matches_phi_coefficient() {
        let truth = [1, 1, 1, 0, 0, 0, 1, 0, 1, 1];
        let pred = [1, 0, 1, 0, 1, 0, 1, 0, 0, 1];
        let (mut tp, mut tn, mut fp, mut fneg) = (0f64, 0f64, 0f64, 0f64);
        for (&p, &t) in pred.iter().zip(&truth) {
            match (p, t) {
                (1, 1) => tp += 1.0,
                (0, 0) => tn += 1.0,
                (1, 0) => fp += 1.0,
                _ => fneg += 1.0,
            }
        }
        let phi = (tp * tn - fp * fneg) / ((tp + fp) * (tp + fneg) * (tn + fp) * (tn + fneg)).sqrt();
        assert!((mcc(&pred, &truth).unwrap() - phi).abs() < 1e-12);
    }

    #[test]
    fn random_predictions_score_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let truth: Vec<usize> = (0..10_000).map(|i| i % 2).collect();
        let pred: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..2)).collect();
        assert!(mcc(&pred, &truth).unwrap().abs() < 0.05);
    }
}
