use serde::{Deserialize, Serialize};

use super::autoencoder::{check_window, encode_trace, register_encoder, Autoencoder, AutoencoderConfig};
use super::layers::{Activation, Dense, Recurrent};
use super::loss::softmax;
use super::params::{Layout, ModelParams};
use super::train::Trainable;
use super::NnError;
use crate::preproc::{Frame, LabeledWindow};
use crate::seeds;

/// Prefix of the parameter blocks copied from the autoencoder.
pub const ENCODER_PREFIX: &str = "enc.";

/// Smallest latent spread used when fitting the input scaling.
const MIN_LATENT_STD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub encoder: AutoencoderConfig,
    /// Hidden widths of the fully connected head (tanh).
    pub head_hidden: Vec<usize>,
    pub classes: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            encoder: AutoencoderConfig::default(),
            head_hidden: vec![16],
            classes: 2,
        }
    }
}

/// Encoder output paired with its label, for training the head without
/// re-running the frozen encoder every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledLatent {
    pub latent: Vec<f64>,
    pub label: usize,
}

/// Frozen recurrent encoder followed by a dense softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub config: ClassifierConfig,
    pub params: ModelParams,
    encoder: Vec<Recurrent>,
    head: Vec<Dense>,
    /// Offset of the frozen `head.shift` / `head.scale` latent standardisation.
    scaling: usize,
    /// Length of the leading frozen section (encoder plus scaling).
    frozen_len: usize,
}

impl Classifier {
    fn architecture(config: &ClassifierConfig) -> (Layout, Vec<Recurrent>, Vec<Dense>, usize, usize) {
        let mut layout = Layout::default();
        let encoder = register_encoder(&mut layout, &config.encoder);
        let latent = config.encoder.latent_dim();
        let scaling = layout.push("head.shift", &[latent]);
        layout.push("head.scale", &[latent]);
        let frozen_len = layout.len();
        let mut input = latent;
        let mut head = Vec::new();
        for (i, &h) in config.head_hidden.iter().enumerate() {
            head.push(Dense::register(&mut layout, &format!("head.{i}"), input, h, Activation::Tanh));
            input = h;
        }
        head.push(Dense::register(
            &mut layout,
            &format!("head.{}", config.head_hidden.len()),
            input,
            config.classes,
            Activation::Identity,
        ));
        (layout, encoder, head, scaling, frozen_len)
    }

    fn zeros(config: ClassifierConfig) -> Result<Self, NnError> {
        config.encoder.validate()?;
        if config.classes < 2 || config.head_hidden.contains(&0) {
            return Err(NnError::InvalidConfig(format!(
                "head {:?} with {} classes",
                config.head_hidden, config.classes
            )));
        }
        let (layout, encoder, head, scaling, frozen_len) = Self::architecture(&config);
        let mut params = ModelParams::zeros(layout);
        let d = config.encoder.latent_dim();
        params.values[scaling + d..scaling + 2 * d].fill(1.0);
        Ok(Self {
            config,
            params,
            encoder,
            head,
            scaling,
            frozen_len,
        })
    }

    /// Take the encoder weights of `autoencoder` verbatim and initialise a
    /// fresh head.
    pub fn from_encoder(
        autoencoder: &Autoencoder,
        head_hidden: Vec<usize>,
        classes: usize,
        seed: u64,
    ) -> Result<Self, NnError> {
        let config = ClassifierConfig {
            encoder: autoencoder.config.clone(),
            head_hidden,
            classes,
        };
        let mut model = Self::zeros(config)?;
        let mut rng = seeds::stream_rng(seed, "nn.classifier.init", 0);
        let init = ModelParams::uniform_init(model.params.layout.clone(), &mut rng);
        model.params.values[model.frozen_len..].copy_from_slice(&init.values[model.frozen_len..]);
        for block in &model.params.layout.blocks[..model.encoder.len() * 3] {
            let src = autoencoder
                .params
                .block(&block.name)
                .ok_or(NnError::LayoutMismatch)?;
            model.params.values[block.range()].copy_from_slice(src);
        }
        Ok(model)
    }

    pub fn from_params(config: ClassifierConfig, params: ModelParams) -> Result<Self, NnError> {
        let mut model = Self::zeros(config)?;
        if !model.params.compatible(&params) {
            return Err(NnError::LayoutMismatch);
        }
        model.params = params;
        Ok(model)
    }

    /// Standardise head inputs with the given per-dimension latent statistics.
    pub fn set_latent_scaling(&mut self, mean: &[f64], std: &[f64]) {
        let d = self.config.encoder.latent_dim();
        assert!(mean.len() == d && std.len() == d, "latent statistics of width {d}");
        let p = &mut self.params.values[self.scaling..self.scaling + 2 * d];
        p[..d].copy_from_slice(mean);
        for (s, v) in p[d..].iter_mut().zip(std) {
            *s = 1.0 / v.max(MIN_LATENT_STD);
        }
    }

    /// Hash of the frozen encoder weights.
    pub fn encoder_fingerprint(&self) -> String {
        self.params.fingerprint(ENCODER_PREFIX)
    }

    pub fn frozen_len(&self) -> usize {
        self.frozen_len
    }

    pub fn latent(&self, window: &[Frame]) -> Result<Vec<f64>, NnError> {
        check_window(window)?;
        let traces = encode_trace(&self.encoder, &self.params.values, window);
        Ok(traces.last().expect("encoder layers").last_hidden().to_vec())
    }

    fn head_activations(&self, latent: &[f64]) -> Vec<Vec<f64>> {
        let d = latent.len();
        let shift = &self.params.values[self.scaling..self.scaling + d];
        let scale = &self.params.values[self.scaling + d..self.scaling + 2 * d];
        let input: Vec<f64> = latent
            .iter()
            .zip(shift.iter().zip(scale))
            .map(|(z, (m, s))| (z - m) * s)
            .collect();
        let mut acts = vec![input];
        for layer in &self.head {
            let next = layer.forward(&self.params.values, acts.last().expect("input"));
            acts.push(next);
        }
        acts
    }

    pub fn head_proba(&self, latent: &[f64]) -> Vec<f64> {
        softmax(self.head_activations(latent).last().expect("logits"))
    }

    pub fn predict_proba(&self, window: &[Frame]) -> Result<Vec<f64>, NnError> {
        Ok(self.head_proba(&self.latent(window)?))
    }

    /// Arg-max class; ties go to the lower index.
    pub fn predict(&self, window: &[Frame]) -> Result<usize, NnError> {
        Ok(argmax(&self.predict_proba(window)?))
    }

    /// Cross-entropy of one latent code; head gradients only.
    pub fn head_loss_grad(&self, latent: &[f64], label: usize, grad: &mut [f64]) -> f64 {
        let acts = self.head_activations(latent);
        let probs = softmax(acts.last().expect("logits"));
        let loss = -probs[label].max(f64::MIN_POSITIVE).ln();
        let mut delta: Vec<f64> = probs.clone();
        delta[label] -= 1.0;
        for (i, layer) in self.head.iter().enumerate().rev() {
            // the last layer is linear, so its output gradient is the logit gradient
            delta = layer.backward(&self.params.values, &acts[i], &acts[i + 1], &delta, grad);
        }
        loss
    }

    fn head_loss(&self, latent: &[f64], label: usize) -> f64 {
        -self.head_proba(latent)[label].max(f64::MIN_POSITIVE).ln()
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl Trainable<LabeledWindow> for Classifier {
    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    fn sample_loss_grad(&self, sample: &LabeledWindow, grad: &mut [f64]) -> f64 {
        let latent = self.latent(&sample.window.values).expect("valid window");
        self.head_loss_grad(&latent, sample.label as usize, grad)
    }

    fn sample_loss(&self, sample: &LabeledWindow) -> f64 {
        let latent = self.latent(&sample.window.values).expect("valid window");
        self.head_loss(&latent, sample.label as usize)
    }

    fn is_frozen(&self, index: usize) -> bool {
        index < self.frozen_len
    }
}

impl Trainable<LabeledLatent> for Classifier {
    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    fn sample_loss_grad(&self, sample: &LabeledLatent, grad: &mut [f64]) -> f64 {
        self.head_loss_grad(&sample.latent, sample.label, grad)
    }

    fn sample_loss(&self, sample: &LabeledLatent) -> f64 {
        self.head_loss(&sample.latent, sample.label)
    }

    fn is_frozen(&self, index: usize) -> bool {
        index < self.frozen_len
    }
}
