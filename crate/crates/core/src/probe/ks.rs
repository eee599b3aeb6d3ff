use serde::{Deserialize, Serialize};

use super::ProbeError;

/// Smallest sample size accepted by [`ks_uniformity_test`]; the asymptotic
/// critical values are not trustworthy below it.
pub const MIN_KS_SAMPLES: usize = 1000;

/// `P(K > x)` for the Kolmogorov distribution, `2 Σ_{k≥1} (−1)^{k−1} e^{−2k²x²}`.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.2 {
        // the alternating series converges slowly here and the value is 1 to
        // double precision anyway
        return 1.0;
    }
    let mut total = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * x * x).exp();
        total += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * total).clamp(0.0, 1.0)
}

/// `c_α` with `P(K > c_α) = α`, by bisection.
pub fn kolmogorov_quantile(alpha: f64) -> f64 {
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must be in (0, 1)");
    let (mut lo, mut hi) = (0.2, 5.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_survival(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Two-sided statistic `sup |F_n(u) − u|` against Uniform(0, 1).
pub fn ks_statistic_uniform(samples: &[f64]) -> f64 {
    let mut u = samples.to_vec();
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    u.iter()
        .enumerate()
        .map(|(i, &v)| {
            let v = v.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - v).max(v - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub n: usize,
    pub statistic: f64,
    /// `c_α / √n`.
    pub critical: f64,
    pub alpha: f64,
}

impl KsResult {
    pub fn passes(&self) -> bool {
        self.statistic < self.critical
    }
}

pub fn ks_uniformity_test(samples: &[f64], alpha: f64) -> Result<KsResult, ProbeError> {
    if samples.len() < MIN_KS_SAMPLES {
        return Err(ProbeError::TooFewSamples {
            needed: MIN_KS_SAMPLES,
            found: samples.len(),
        });
    }
    let n = samples.len();
    Ok(KsResult {
        n,
        statistic: ks_statistic_uniform(samples),
        critical: kolmogorov_quantile(alpha) / (n as f64).sqrt(),
        alpha,
    })
}
