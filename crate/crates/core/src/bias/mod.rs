//! Selection and perturbation bias: which semantics the text expresses, and
//! which of those may be randomly altered on the way.

mod codec;
mod perturb;

pub use codec::{
    binomial, complement, decode_perturbation, decode_selection, encode_perturbation,
    encode_selection, enumerate_graded_lex, first_position_of_size, SubsetCode, MAX_ENUMERATION,
    MAX_UNIVERSE,
};
pub use perturb::Perturber;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latent::CovarianceSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BiasError {
    #[error("{what} = {code} is outside [1, {max}]")]
    CodeOutOfRange {
        code: u64,
        max: u64,
        what: &'static str,
    },
    #[error("subset {subset:?} is not a sorted subset of a {universe}-element universe")]
    InvalidSubset { subset: Vec<usize>, universe: usize },
    #[error("perturbable set must be a proper subset of the selected set")]
    NotProperSubset,
    #[error("universe must contain at least one index")]
    EmptyUniverse,
    #[error("universe of size {n} exceeds the limit of {max}")]
    UniverseTooLarge { n: usize, max: usize },
    #[error("perturbation probability {0} is outside [0, 1]")]
    InvalidProbability(f64),
    #[error("noise covariance must be {expected}-dimensional, got {found}")]
    NoiseDimension { expected: usize, found: usize },
}

/// A subset written either as its integer code or as explicit 1-based indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SubsetSpec {
    Code(u64),
    Indices(Vec<usize>),
}

fn default_perturb_prob() -> f64 {
    0.75
}

fn default_rho() -> SubsetSpec {
    SubsetSpec::Code(1)
}

/// Bias settings as written in a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasConfig {
    pub theta: SubsetSpec,
    #[serde(default = "default_rho")]
    pub rho: SubsetSpec,
    /// Per-index probability that a perturbable coordinate is actually perturbed.
    #[serde(default = "default_perturb_prob")]
    pub perturb_prob: f64,
    /// Covariance of the additive text-side noise; defaults to `W_{n_s}(I, n_s)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_cov: Option<CovarianceSpec>,
}

impl BiasConfig {
    /// Full selection, no perturbation.
    pub fn unbiased(n_s: usize) -> Self {
        Self::from_codes((1u64 << n_s) - 1, 1)
    }

    pub fn from_codes(theta: u64, rho: u64) -> Self {
        Self {
            theta: SubsetSpec::Code(theta),
            rho: SubsetSpec::Code(rho),
            perturb_prob: default_perturb_prob(),
            noise_cov: None,
        }
    }

    pub fn noise_spec(&self, n_s: usize) -> CovarianceSpec {
        self.noise_cov
            .clone()
            .unwrap_or_else(|| CovarianceSpec::wishart(n_s, n_s))
    }

    /// Validates the config against `n_s` semantic dimensions.
    pub fn resolve(&self, n_s: usize) -> Result<BiasSetting, BiasError> {
        if !(0.0..=1.0).contains(&self.perturb_prob) {
            return Err(BiasError::InvalidProbability(self.perturb_prob));
        }
        let theta = match &self.theta {
            SubsetSpec::Code(c) => SubsetCode::selection(*c, n_s)?,
            SubsetSpec::Indices(idx) => SubsetCode::selection(encode_selection(idx, n_s)?, n_s)?,
        };
        let rho = match &self.rho {
            SubsetSpec::Code(c) => SubsetCode::perturbation(*c, &theta.subset)?,
            SubsetSpec::Indices(idx) => SubsetCode::perturbation(
                encode_perturbation(idx, &theta.subset)?,
                &theta.subset,
            )?,
        };
        let noise = self.noise_spec(n_s);
        if noise.dim != n_s {
            return Err(BiasError::NoiseDimension {
                expected: n_s,
                found: noise.dim,
            });
        }
        Ok(BiasSetting {
            theta,
            rho,
            perturb_prob: self.perturb_prob,
        })
    }
}

/// Resolved bias: both code and index form of `θ` and `ρ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasSetting {
    pub theta: SubsetCode,
    pub rho: SubsetCode,
    pub perturb_prob: f64,
}

impl BiasSetting {
    pub fn n_s(&self) -> usize {
        self.theta.universe_size
    }

    /// `I_θ`, 1-based.
    pub fn selected(&self) -> &[usize] {
        &self.theta.subset
    }

    /// `I_ρ`, 1-based.
    pub fn perturbable(&self) -> &[usize] {
        &self.rho.subset
    }

    /// `I_θ \ I_ρ`: the semantics that are selected and never perturbed.
    pub fn unbiased(&self) -> Vec<usize> {
        self.theta
            .subset
            .iter()
            .copied()
            .filter(|i| !self.rho.subset.contains(i))
            .collect()
    }

    /// Encoder width the identifiability result calls for, `|I_θ| − |I_ρ|`.
    pub fn identified_dim(&self) -> usize {
        self.theta.len() - self.rho.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolve_accepts_codes_or_indices() {
        // over an 8-element I_θ the code for [2] is 10, not the 12 it has over [10]
        let a = BiasConfig::from_codes(968, 10).resolve(10).unwrap();
        let b = BiasConfig {
            theta: SubsetSpec::Indices((1..=8).collect()),
            rho: SubsetSpec::Indices(vec![1, 2]),
            perturb_prob: 0.75,
            noise_cov: None,
        }
        .resolve(10)
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.unbiased(), vec![3, 4, 5, 6, 7, 8]);
        assert_eq!(a.identified_dim(), 6);
    }

    #[test]
    fn resolve_rejects_bad_settings() {
        assert!(BiasConfig::from_codes(1024, 1).resolve(10).is_err());
        let mut c = BiasConfig::unbiased(10);
        c.perturb_prob = 1.5;
        assert!(c.resolve(10).is_err());
        let c = BiasConfig {
            theta: SubsetSpec::Indices(vec![1, 2]),
            rho: SubsetSpec::Indices(vec![1, 2]),
            perturb_prob: 0.5,
            noise_cov: None,
        };
        assert_eq!(c.resolve(10), Err(BiasError::NotProperSubset));
    }

    #[test]
    fn config_json_accepts_both_forms() {
        let c: BiasConfig = serde_json::from_str(r#"{"theta": [1,2,3], "rho": 1}"#).unwrap();
        let s = c.resolve(10).unwrap();
        assert_eq!(s.theta.index, 56);
        assert!(s.rho.is_empty());
        assert_eq!(s.perturb_prob, 0.75);
    }
}
