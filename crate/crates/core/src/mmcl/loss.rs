use serde::{Deserialize, Serialize};

use super::MmclError;
use crate::numerics::{log_sum_exp, pairwise_sq_dist, Matrix, Tape, Var};

/// Keeps the square root differentiable when a pair coincides.
const SQRT_EPS: f64 = 1e-12;
const NORM_EPS: f64 = 1e-12;

/// Pairwise similarity used as InfoNCE logits (before dividing by `τ`).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    #[default]
    NegSqEuclidean,
    NegEuclidean,
    Cosine,
}

fn check_pair(zx: (usize, usize), zt: (usize, usize)) -> Result<(), MmclError> {
    if zx != zt {
        return Err(MmclError::ShapeMismatch { zx, zt });
    }
    if zx.0 < 2 {
        return Err(MmclError::TooFewPairs(zx.0));
    }
    Ok(())
}

/// `K × K` logits `sim(zx_i, zt_j) / τ`.
pub fn similarity_logits(zx: &Matrix, zt: &Matrix, tau: f64, sim: Similarity) -> Matrix {
    let raw = match sim {
        Similarity::NegSqEuclidean => pairwise_sq_dist(zx, zt).map(|d| -d),
        Similarity::NegEuclidean => pairwise_sq_dist(zx, zt).map(|d| -(d + SQRT_EPS).sqrt()),
        Similarity::Cosine => {
            let unit = |m: &Matrix| {
                let mut out = m.clone();
                for r in 0..m.rows() {
                    let norm = (m.row(r).iter().map(|v| v * v).sum::<f64>() + NORM_EPS).sqrt();
                    out.row_mut(r).iter_mut().for_each(|v| *v /= norm);
                }
                out
            };
            unit(zx).matmul_t(&unit(zt))
        }
    };
    raw.scale(1.0 / tau)
}

/// Symmetric InfoNCE: the mean of the row-wise and column-wise softmax
/// cross-entropies of the logit matrix, with matching pairs on the diagonal.
pub fn info_nce_loss(zx: &Matrix, zt: &Matrix, tau: f64, sim: Similarity) -> Result<f64, MmclError> {
    check_pair(zx.shape(), zt.shape())?;
    if !(tau > 0.0) {
        return Err(MmclError::InvalidConfig(format!("temperature must be positive, got {tau}")));
    }
    let logits = similarity_logits(zx, zt, tau, sim);
    let k = logits.rows();
    let rows: f64 = (0..k).map(|i| log_sum_exp(logits.row(i)) - logits[(i, i)]).sum();
    let lt = logits.transpose();
    let cols: f64 = (0..k).map(|i| log_sum_exp(lt.row(i)) - lt[(i, i)]).sum();
    Ok(0.5 * (rows + cols) / k as f64)
}

/// [`info_nce_loss`] recorded on a tape so it can be differentiated.
pub fn info_nce_on_tape(
    tape: &mut Tape,
    zx: Var,
    zt: Var,
    tau: f64,
    sim: Similarity,
) -> Result<Var, MmclError> {
    check_pair(tape.value(zx).shape(), tape.value(zt).shape())?;
    let k = tape.value(zx).rows();
    let raw = match sim {
        Similarity::NegSqEuclidean => tape.sq_dist(zx, zt),
        Similarity::NegEuclidean => {
            let d = tape.sq_dist(zx, zt);
            tape.sqrt(d, SQRT_EPS)
        }
        Similarity::Cosine => {
            let a = tape.row_normalize(zx, NORM_EPS);
            let b = tape.row_normalize(zt, NORM_EPS);
            let bt = tape.transpose(b);
            tape.matmul(a, bt)
        }
    };
    // distances enter with a minus sign, cosine with a plus
    let sign = if sim == Similarity::Cosine { 1.0 } else { -1.0 };
    let logits = tape.scale(raw, sign / tau);
    let diag: Vec<usize> = (0..k).collect();
    let forward = tape.cross_entropy(logits, &diag);
    let logits_t = tape.transpose(logits);
    let backward = tape.cross_entropy(logits_t, &diag);
    let both = tape.add(forward, backward);
    Ok(tape.scale(both, 0.5))
}
