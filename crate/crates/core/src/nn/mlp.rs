use serde::{Deserialize, Serialize};

use super::layers::{Activation, Dense};
use super::params::{Layout, ModelParams};
use super::train::Trainable;
use super::NnError;
use crate::seeds;

/// Regression example for [`Mlp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

/// Dense net with tanh hidden layers and a linear output, trained on MSE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpRepr", into = "MlpRepr")]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: ModelParams,
    layers: Vec<Dense>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpRepr {
    sizes: Vec<usize>,
    params: ModelParams,
}

impl From<Mlp> for MlpRepr {
    fn from(m: Mlp) -> Self {
        Self {
            sizes: m.sizes,
            params: m.params,
        }
    }
}

impl TryFrom<MlpRepr> for Mlp {
    type Error = NnError;

    fn try_from(r: MlpRepr) -> Result<Self, NnError> {
        Mlp::from_params(r.sizes, r.params)
    }
}

impl Mlp {
    fn architecture(sizes: &[usize]) -> (Layout, Vec<Dense>) {
        let mut layout = Layout::default();
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, pair)| {
                let act = if i == last { Activation::Identity } else { Activation::Tanh };
                Dense::register(&mut layout, &format!("mlp.{i}"), pair[0], pair[1], act)
            })
            .collect();
        (layout, layers)
    }

    fn check(sizes: &[usize]) -> Result<(), NnError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(NnError::InvalidConfig(format!("mlp sizes {sizes:?}")));
        }
        Ok(())
    }

    /// `sizes` = input, hidden..., output.
    pub fn new(sizes: Vec<usize>, seed: u64) -> Result<Self, NnError> {
        Self::check(&sizes)?;
        let (layout, layers) = Self::architecture(&sizes);
        let mut rng = seeds::stream_rng(seed, "nn.mlp.init", 0);
        Ok(Self {
            params: ModelParams::uniform_init(layout, &mut rng),
            sizes,
            layers,
        })
    }

    pub fn from_params(sizes: Vec<usize>, params: ModelParams) -> Result<Self, NnError> {
        Self::check(&sizes)?;
        let (layout, layers) = Self::architecture(&sizes);
        if layout != params.layout || params.values.len() != layout.len() {
            return Err(NnError::LayoutMismatch);
        }
        Ok(Self { sizes, params, layers })
    }

    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        for layer in &self.layers {
            let next = layer.forward(&self.params.values, acts.last().expect("input"));
            acts.push(next);
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        if x.len() != self.sizes[0] {
            return Err(NnError::ShapeMismatch(format!(
                "expected {} inputs, got {}",
                self.sizes[0],
                x.len()
            )));
        }
        Ok(self.activations(x).pop().expect("output"))
    }
}

impl Trainable<Example> for Mlp {
    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    fn sample_loss_grad(&self, sample: &Example, grad: &mut [f64]) -> f64 {
        let acts = self.activations(&sample.input);
        let out = acts.last().expect("output");
        let n = out.len() as f64;
        let mut loss = 0.0;
        let mut delta: Vec<f64> = out
            .iter()
            .zip(&sample.target)
            .map(|(y, t)| {
                loss += (y - t) * (y - t);
                2.0 * (y - t) / n
            })
            .collect();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            delta = layer.backward(&self.params.values, &acts[i], &acts[i + 1], &delta, grad);
        }
        loss / n
    }

    fn sample_loss(&self, sample: &Example) -> f64 {
        let out = self.activations(&sample.input).pop().expect("output");
        super::loss::mse_loss(&out, &sample.target).expect("matching target width")
    }
}
