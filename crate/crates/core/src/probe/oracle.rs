use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ks_uniformity_test, DarmoisMap, KsResult, ProbeError};
use crate::latent::GenerativeModel;
use crate::mmcl::{alignment, Representation};
use crate::numerics::Matrix;

/// The analytic optimum of the alignment/uniformity objective: invert the
/// known generator, keep the unbiased semantics `s_{I_θ \ I_ρ}`, and push them
/// through the Darmois map of their prior.
#[derive(Clone, Debug)]
pub struct DarmoisOracle {
    model: GenerativeModel,
    map: DarmoisMap,
    /// 0-based columns of `s` in `g_x⁻¹(x)`.
    x_cols: Vec<usize>,
    /// Positions of the same coordinates in `g_t⁻¹(t)`.
    t_cols: Vec<usize>,
}

impl DarmoisOracle {
    pub fn new(model: &GenerativeModel) -> Result<Self, ProbeError> {
        let unbiased = model.bias.unbiased();
        let selected = model.bias.selected();
        let x_cols: Vec<usize> = unbiased.iter().map(|i| i - 1).collect();
        let t_cols: Vec<usize> = unbiased
            .iter()
            .map(|i| selected.iter().position(|s| s == i).expect("I_θ \\ I_ρ ⊆ I_θ"))
            .collect();
        let map = DarmoisMap::in_order(&model.prior.cov_s.principal_submatrix(&x_cols))?;
        Ok(Self {
            model: model.clone(),
            map,
            x_cols,
            t_cols,
        })
    }

    pub fn map(&self) -> &DarmoisMap {
        &self.map
    }

    pub fn try_encode_x(&self, x: &Matrix) -> Result<Matrix, ProbeError> {
        let h = self.model.g_x.invert(x)?;
        Ok(self.map.apply_batch(&h.select_columns(&self.x_cols)))
    }

    pub fn try_encode_t(&self, t: &Matrix) -> Result<Matrix, ProbeError> {
        let h = self.model.g_t.invert(t)?;
        Ok(self.map.apply_batch(&h.select_columns(&self.t_cols)))
    }
}

impl Representation for DarmoisOracle {
    fn encode_x(&self, x: &Matrix) -> Matrix {
        self.try_encode_x(x).expect("generator inverse")
    }

    fn encode_t(&self, t: &Matrix) -> Matrix {
        self.try_encode_t(t).expect("generator inverse")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalMinimumReport {
    /// Mean distance between the paired oracle embeddings.
    pub alignment: f64,
    /// KS uniformity test of each output coordinate of the image-side oracle.
    pub uniformity: Vec<KsResult>,
}

impl GlobalMinimumReport {
    pub fn all_uniform(&self) -> bool {
        self.uniformity.iter().all(KsResult::passes)
    }
}

/// Evaluates the oracle encoders on `n` fresh pairs.
pub fn verify_global_minimum<R: Rng + ?Sized>(
    model: &GenerativeModel,
    n: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<GlobalMinimumReport, ProbeError> {
    let oracle = DarmoisOracle::new(model)?;
    let batch = model.sample_pairs(n, rng)?;
    let fx = oracle.try_encode_x(&batch.x)?;
    let ft = oracle.try_encode_t(&batch.t)?;
    let alignment = alignment(&fx, &ft)?;
    let uniformity = (0..fx.cols())
        .map(|c| ks_uniformity_test(&fx.column(c), alpha))
        .collect::<Result<_, _>>()?;
    Ok(GlobalMinimumReport {
        alignment,
        uniformity,
    })
}
