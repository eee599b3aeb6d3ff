use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tape::{sigmoid, Tape, Var};
use super::Matrix;

/// Elementwise nonlinearity applied after a dense layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    LeakyRelu { slope: f64 },
    Sigmoid,
    Tanh,
}

impl Activation {
    pub const LEAKY_0_2: Activation = Activation::LeakyRelu { slope: 0.2 };

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    fn record(self, tape: &mut Tape, v: Var) -> Var {
        match self {
            Activation::Identity => v,
            Activation::LeakyRelu { slope } => tape.leaky_relu(v, slope),
            Activation::Sigmoid => tape.sigmoid(v),
            Activation::Tanh => tape.tanh(v),
        }
    }
}

/// Weight initialization scheme.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Weights and biases from `U(-1/√fan_in, 1/√fan_in)`.
    #[default]
    FanInUniform,
    /// Weights from `N(0, 2 / ((1 + a²)·fan_in))` for the hidden leaky-ReLU
    /// slope `a` (variance preserving through deep stacks); zero biases.
    He,
}

/// Fully connected network. Parameters are stored flat as
/// `[w0, b0, w1, b1, ...]` with `w_l` shaped `in × out` and `b_l` shaped `1 × out`,
/// which is the layout the optimizer works on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    hidden: Activation,
    output: Activation,
    params: Vec<Matrix>,
}

impl Mlp {
    /// Layer widths `sizes = [input, hidden.., output]`, with
    /// [`Init::FanInUniform`] weights.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        Self::with_init(sizes, hidden, output, Init::FanInUniform, rng)
    }

    pub fn with_init<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        init: Init,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        assert!(sizes.iter().all(|&s| s > 0), "layer widths must be positive");
        let slope = match hidden {
            Activation::LeakyRelu { slope } => slope,
            Activation::Identity => 1.0,
            _ => 0.0,
        };
        let mut params = Vec::with_capacity(2 * (sizes.len() - 1));
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            match init {
                Init::FanInUniform => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    params.push(Matrix::from_fn(fan_in, fan_out, |_, _| {
                        rng.random_range(-bound..bound)
                    }));
                    params.push(Matrix::from_fn(1, fan_out, |_, _| rng.random_range(-bound..bound)));
                }
                Init::He => {
                    let std = (2.0 / ((1.0 + slope * slope) * fan_in as f64)).sqrt();
                    params.push(Matrix::from_fn(fan_in, fan_out, |_, _| {
                        std * rng.sample::<f64, _>(StandardNormal)
                    }));
                    params.push(Matrix::zeros(1, fan_out));
                }
            }
        }
        Self {
            sizes: sizes.to_vec(),
            hidden,
            output,
            params,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn params(&self) -> &[Matrix] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Matrix] {
        &mut self.params
    }

    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(Matrix::len).sum()
    }

    fn activation_for(&self, layer: usize) -> Activation {
        if layer + 1 == self.n_layers() {
            self.output
        } else {
            self.hidden
        }
    }

    /// Plain inference on a batch (one sample per row).
    pub fn forward(&self, x: &Matrix) -> Matrix {
        assert_eq!(x.cols(), self.input_dim(), "MLP input width mismatch");
        let mut h = x.clone();
        for l in 0..self.n_layers() {
            let act = self.activation_for(l);
            h = h
                .matmul(&self.params[2 * l])
                .add_row(self.params[2 * l + 1].as_slice())
                .map(|v| act.apply(v));
        }
        h
    }

    /// Records the forward pass on `tape`. Returns the output node and the
    /// parameter nodes in storage order.
    pub fn forward_on_tape(&self, tape: &mut Tape, x: Var) -> (Var, Vec<Var>) {
        let vars: Vec<Var> = self.params.iter().map(|p| tape.param(p.clone())).collect();
        let out = self.forward_with_vars(tape, x, &vars);
        (out, vars)
    }

    /// Forward pass using already-registered parameter nodes.
    pub fn forward_with_vars(&self, tape: &mut Tape, x: Var, vars: &[Var]) -> Var {
        assert_eq!(vars.len(), self.params.len());
        let mut h = x;
        for l in 0..self.n_layers() {
            let z = tape.matmul(h, vars[2 * l]);
            let z = tape.add_row(z, vars[2 * l + 1]);
            h = self.activation_for(l).record(tape, z);
        }
        h
    }
}
