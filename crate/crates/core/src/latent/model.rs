use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    build_invertible_mlp, sample_covariance, sample_latents, InvertibleActivation, InvertibleMlp,
    LatentBatch, LatentPrior, LatentSpec, ModelError, DEFAULT_GENERATOR_LAYERS,
    DEFAULT_RCOND_FLOOR,
};
use crate::bias::{BiasConfig, BiasSetting, Perturber};
use crate::numerics::Matrix;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_layers: usize,
    pub rcond_floor: f64,
    #[serde(default)]
    pub activation: InvertibleActivation,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_layers: DEFAULT_GENERATOR_LAYERS,
            rcond_floor: DEFAULT_RCOND_FLOOR,
            activation: InvertibleActivation::default(),
        }
    }
}

/// Paired observations together with the latents that produced them.
#[derive(Clone, Debug)]
pub struct PairBatch {
    pub latents: LatentBatch,
    /// Text-side semantics `s̃_{I_θ}` after perturbation.
    pub s_text: Matrix,
    pub x: Matrix,
    pub t: Matrix,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    prior: LatentPrior,
    bias: BiasSetting,
    noise_cov: Matrix,
    generator: GeneratorConfig,
    g_x: InvertibleMlp,
    g_t: InvertibleMlp,
}

/// Complete data-generating process for one bias setting:
/// `x = g_x(s, m_x)` and `t = g_t(s̃_{I_θ}, m_t)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct GenerativeModel {
    pub prior: LatentPrior,
    pub bias: BiasSetting,
    pub generator: GeneratorConfig,
    pub g_x: InvertibleMlp,
    pub g_t: InvertibleMlp,
    perturber: Perturber,
}

impl From<GenerativeModel> for ModelFile {
    fn from(m: GenerativeModel) -> Self {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            noise_cov: m.perturber.noise_cov().clone(),
            prior: m.prior,
            bias: m.bias,
            generator: m.generator,
            g_x: m.g_x,
            g_t: m.g_t,
        }
    }
}

impl TryFrom<ModelFile> for GenerativeModel {
    type Error = ModelError;

    fn try_from(f: ModelFile) -> Result<Self, ModelError> {
        if f.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelError::UnsupportedVersion(f.format_version));
        }
        let prior = LatentPrior::from_covariances(f.prior.spec, f.prior.cov_s, f.prior.cov_mx, f.prior.cov_mt)?;
        let perturber = Perturber::new(&f.bias, f.noise_cov)?;
        Ok(Self {
            prior,
            bias: f.bias,
            generator: f.generator,
            g_x: f.g_x,
            g_t: f.g_t,
            perturber,
        })
    }
}

impl GenerativeModel {
    /// Draws covariances, the noise covariance and both generators.
    pub fn build<R: Rng + ?Sized>(
        spec: &LatentSpec,
        bias: &BiasConfig,
        generator: &GeneratorConfig,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        spec.validate()?;
        let setting = bias.resolve(spec.n_s)?;
        let prior = LatentPrior::realize(spec, rng)?;
        let noise_cov = sample_covariance(&bias.noise_spec(spec.n_s), rng)?;
        let g_x = build_invertible_mlp(
            spec.n_s + spec.dim_mx,
            generator.n_layers,
            generator.activation,
            generator.rcond_floor,
            rng,
        )?;
        let g_t = build_invertible_mlp(
            setting.theta.len() + spec.dim_mt,
            generator.n_layers,
            generator.activation,
            generator.rcond_floor,
            rng,
        )?;
        let perturber = Perturber::new(&setting, noise_cov)?;
        Ok(Self {
            prior,
            bias: setting,
            generator: generator.clone(),
            g_x,
            g_t,
            perturber,
        })
    }

    pub fn spec(&self) -> &LatentSpec {
        &self.prior.spec
    }

    pub fn n_s(&self) -> usize {
        self.prior.spec.n_s
    }

    pub fn x_dim(&self) -> usize {
        self.g_x.dim()
    }

    pub fn t_dim(&self) -> usize {
        self.g_t.dim()
    }

    pub fn perturber(&self) -> &Perturber {
        &self.perturber
    }

    pub fn noise_cov(&self) -> &Matrix {
        self.perturber.noise_cov()
    }

    /// 0-based column indices of `I_θ` in `s`.
    pub fn selected_columns(&self) -> Vec<usize> {
        self.bias.selected().iter().map(|i| i - 1).collect()
    }

    pub fn sample_latents<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> LatentBatch {
        sample_latents(&self.prior, rng, n)
    }

    /// `x = g_x(s, m_x)` for every row.
    pub fn render_images(&self, s: &Matrix, m_x: &Matrix) -> Result<Matrix, ModelError> {
        self.g_x.apply(&Matrix::hstack(&[s, m_x]))
    }

    /// `t = g_t(s̃_{I_θ}, m_t)` for every row.
    pub fn render_texts(&self, s_text: &Matrix, m_t: &Matrix) -> Result<Matrix, ModelError> {
        self.g_t.apply(&Matrix::hstack(&[s_text, m_t]))
    }

    /// Generates observations for already drawn latents; the perturbation
    /// consumes `rng`.
    pub fn observe<R: Rng + ?Sized>(&self, latents: LatentBatch, rng: &mut R) -> Result<PairBatch, ModelError> {
        let s_theta = latents.s.select_columns(&self.selected_columns());
        let s_text = self.perturber.perturb_batch(&s_theta, rng);
        let x = self.render_images(&latents.s, &latents.m_x)?;
        let t = self.render_texts(&s_text, &latents.m_t)?;
        Ok(PairBatch {
            latents,
            s_text,
            x,
            t,
        })
    }

    pub fn sample_pairs<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<PairBatch, ModelError> {
        let latents = self.sample_latents(n, rng);
        self.observe(latents, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shapes_follow_the_bias_setting() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = GenerativeModel::build(
            &LatentSpec::independent(),
            &BiasConfig::from_codes(968, 10),
            &GeneratorConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(m.x_dim(), 15);
        assert_eq!(m.t_dim(), 13);
        let batch = m.sample_pairs(32, &mut rng).unwrap();
        assert_eq!(batch.x.shape(), (32, 15));
        assert_eq!(batch.t.shape(), (32, 13));
        assert_eq!(batch.s_text.shape(), (32, 8));
        // unperturbed selected coordinates are copied from s
        for r in 0..32 {
            assert_eq!(&batch.s_text.row(r)[2..], &batch.latents.s.row(r)[2..8]);
        }
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = GenerativeModel::build(
            &LatentSpec::dependent(),
            &BiasConfig::from_codes(1023, 57),
            &GeneratorConfig::default(),
            &mut rng,
        )
        .unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: GenerativeModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back.g_x, m.g_x);
        assert_eq!(back.g_t, m.g_t);
        assert_eq!(back.prior, m.prior);
        assert_eq!(back.noise_cov(), m.noise_cov());
        let a = m.sample_pairs(8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = back.sample_pairs(8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.t, b.t);
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = GenerativeModel::build(
            &LatentSpec::independent(),
            &BiasConfig::unbiased(10),
            &GeneratorConfig::default(),
            &mut rng,
        )
        .unwrap();
        let mut v = serde_json::to_value(&m).unwrap();
        v["format_version"] = 99.into();
        assert!(serde_json::from_value::<GenerativeModel>(v).is_err());
    }
}
