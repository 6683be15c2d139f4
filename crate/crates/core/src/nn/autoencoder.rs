use serde::{Deserialize, Serialize};

use super::layers::{Activation, CellKind, Dense, Recurrent, RecurrentTrace, Seq};
use super::params::{Layout, ModelParams};
use super::train::Trainable;
use super::NnError;
use crate::preproc::{Frame, Window, CHANNELS};
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderConfig {
    /// Encoder hidden sizes, outermost first. The decoder mirrors them.
    pub hidden: Vec<usize>,
    pub cell: CellKind,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 16, 8],
            cell: CellKind::Gated,
        }
    }
}

impl AutoencoderConfig {
    pub fn latent_dim(&self) -> usize {
        *self.hidden.last().expect("at least one encoder layer")
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(NnError::InvalidConfig(format!(
                "encoder hidden sizes {:?}",
                self.hidden
            )));
        }
        Ok(())
    }
}

/// Register the encoder stack as `enc.{i}.*` blocks.
pub(crate) fn register_encoder(
    layout: &mut Layout,
    config: &AutoencoderConfig,
) -> Vec<Recurrent> {
    let mut input = CHANNELS;
    config
        .hidden
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            let layer = Recurrent::register(layout, &format!("enc.{i}"), config.cell, input, h);
            input = h;
            layer
        })
        .collect()
}

/// Encoder runs over the whole window; its last hidden state is the latent
/// code, which is repeated at every step as decoder input.
pub(crate) fn encode_trace(
    encoder: &[Recurrent],
    params: &[f64],
    window: &[Frame],
) -> Vec<RecurrentTrace> {
    let mut traces: Vec<RecurrentTrace> = Vec::with_capacity(encoder.len());
    let mut input = Seq::from_rows(window);
    for layer in encoder {
        let trace = layer.forward(params, input);
        input = trace.hidden.clone();
        traces.push(trace);
    }
    traces
}

/// Backpropagate a gradient on the latent code through the encoder stack.
pub(crate) fn encoder_backward(
    encoder: &[Recurrent],
    params: &[f64],
    traces: &[RecurrentTrace],
    d_latent: &[f64],
    grad: &mut [f64],
) {
    let steps = traces[0].inputs.len();
    let last = encoder.len() - 1;
    let mut d_hidden = Seq::zeros(steps, encoder[last].hidden);
    d_hidden.row_mut(steps - 1).copy_from_slice(d_latent);
    for (layer, trace) in encoder.iter().zip(traces).rev() {
        d_hidden = layer.backward(params, trace, &d_hidden, grad);
    }
}

/// Stacked recurrent sequence autoencoder with a per-step linear readout.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub config: AutoencoderConfig,
    pub params: ModelParams,
    encoder: Vec<Recurrent>,
    decoder: Vec<Recurrent>,
    readout: Dense,
}

impl Autoencoder {
    fn architecture(config: &AutoencoderConfig) -> (Layout, Vec<Recurrent>, Vec<Recurrent>, Dense) {
        let mut layout = Layout::default();
        let encoder = register_encoder(&mut layout, config);
        let mut input = config.latent_dim();
        let decoder = config
            .hidden
            .iter()
            .rev()
            .enumerate()
            .map(|(i, &h)| {
                let layer = Recurrent::register(&mut layout, &format!("dec.{i}"), config.cell, input, h);
                input = h;
                layer
            })
            .collect();
        let readout = Dense::register(&mut layout, "out", input, CHANNELS, Activation::Identity);
        (layout, encoder, decoder, readout)
    }

    /// Seeded uniform initialisation.
    pub fn new(config: AutoencoderConfig, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let (layout, encoder, decoder, readout) = Self::architecture(&config);
        let mut rng = seeds::stream_rng(seed, "nn.autoencoder.init", 0);
        let params = ModelParams::uniform_init(layout, &mut rng);
        Ok(Self {
            config,
            params,
            encoder,
            decoder,
            readout,
        })
    }

    pub fn zeros(config: AutoencoderConfig) -> Result<Self, NnError> {
        config.validate()?;
        let (layout, encoder, decoder, readout) = Self::architecture(&config);
        Ok(Self {
            config,
            params: ModelParams::zeros(layout),
            encoder,
            decoder,
            readout,
        })
    }

    pub fn from_params(config: AutoencoderConfig, params: ModelParams) -> Result<Self, NnError> {
        let mut model = Self::zeros(config)?;
        if !model.params.compatible(&params) {
            return Err(NnError::LayoutMismatch);
        }
        model.params = params;
        Ok(model)
    }

    pub fn layout(config: &AutoencoderConfig) -> Layout {
        Self::architecture(config).0
    }

    pub fn encode(&self, window: &[Frame]) -> Result<Vec<f64>, NnError> {
        check_window(window)?;
        let traces = encode_trace(&self.encoder, &self.params.values, window);
        Ok(traces.last().expect("encoder layers").last_hidden().to_vec())
    }

    pub fn forward(&self, window: &[Frame]) -> Result<Vec<Frame>, NnError> {
        check_window(window)?;
        let (_, _, out) = self.run(window);
        Ok(out)
    }

    fn run(&self, window: &[Frame]) -> (Vec<RecurrentTrace>, Vec<RecurrentTrace>, Vec<Frame>) {
        let p = &self.params.values;
        let enc = encode_trace(&self.encoder, p, window);
        let latent = enc.last().expect("encoder layers").last_hidden();
        let steps = window.len();
        let mut input = Seq::zeros(steps, latent.len());
        for t in 0..steps {
            input.row_mut(t).copy_from_slice(latent);
        }
        let mut dec = Vec::with_capacity(self.decoder.len());
        for layer in &self.decoder {
            let trace = layer.forward(p, input);
            input = trace.hidden.clone();
            dec.push(trace);
        }
        let top = &dec.last().expect("decoder layers").hidden;
        let out = (0..steps)
            .map(|t| {
                let y = self.readout.forward(p, top.row(t));
                let mut frame = [0.0; CHANNELS];
                frame.copy_from_slice(&y);
                frame
            })
            .collect();
        (enc, dec, out)
    }

    /// MSE reconstruction loss of one window, accumulating its gradient.
    pub fn window_loss_grad(&self, window: &[Frame], grad: &mut [f64]) -> f64 {
        let p = &self.params.values;
        let (enc, dec, out) = self.run(window);
        let steps = window.len();
        let n = (steps * CHANNELS) as f64;
        let mut loss = 0.0;
        let top = &dec.last().expect("decoder layers").hidden;
        let mut d_top = Seq::zeros(steps, top.dim);
        for t in 0..steps {
            let mut dy = [0.0; CHANNELS];
            for c in 0..CHANNELS {
                let diff = out[t][c] - window[t][c];
                loss += diff * diff;
                dy[c] = 2.0 * diff / n;
            }
            let dh = self
                .readout
                .backward(p, top.row(t), &out[t], &dy, grad);
            d_top.row_mut(t).copy_from_slice(&dh);
        }
        let mut d_hidden = d_top;
        for (layer, trace) in self.decoder.iter().zip(&dec).rev() {
            d_hidden = layer.backward(p, trace, &d_hidden, grad);
        }
        // the latent code fed every decoder step
        let mut d_latent = vec![0.0; self.config.latent_dim()];
        for t in 0..steps {
            for (acc, v) in d_latent.iter_mut().zip(d_hidden.row(t)) {
                *acc += v;
            }
        }
        encoder_backward(&self.encoder, p, &enc, &d_latent, grad);
        loss / n
    }

    pub fn reconstruction_loss(&self, window: &[Frame]) -> f64 {
        let (_, _, out) = self.run(window);
        let n = (window.len() * CHANNELS) as f64;
        out.iter()
            .zip(window)
            .flat_map(|(o, x)| o.iter().zip(x).map(|(a, b)| (a - b) * (a - b)))
            .sum::<f64>()
            / n
    }
}

pub(crate) fn check_window(window: &[Frame]) -> Result<(), NnError> {
    if window.is_empty() {
        return Err(NnError::ShapeMismatch("empty window".into()));
    }
    if window.iter().flatten().any(|v| !v.is_finite()) {
        return Err(NnError::ShapeMismatch("non-finite input".into()));
    }
    Ok(())
}

impl Trainable<Window> for Autoencoder {
    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    fn sample_loss_grad(&self, sample: &Window, grad: &mut [f64]) -> f64 {
        self.window_loss_grad(&sample.values, grad)
    }

    fn sample_loss(&self, sample: &Window) -> f64 {
        self.reconstruction_loss(&sample.values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::train::batch_loss_grad;
    use rand::Rng;

    pub(crate) fn random_window(seed: u64, len: usize) -> Window {
        let mut rng = seeds::stream_rng(seed, "test.window", 0);
        Window {
            values: (0..len)
                .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
                .collect(),
            source: "test".into(),
            start_index: 0,
        }
    }

    #[test]
    fn zero_model_reconstructs_zeros() {
        let config = AutoencoderConfig {
            hidden: vec![5, 4, 3],
            cell: CellKind::SimpleTanh,
        };
        let model = Autoencoder::zeros(config).unwrap();
        let out = model.forward(&random_window(1, 40).values).unwrap();
        assert_eq!(out.len(), 40);
        assert!(out.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_shape_preserving_and_deterministic() {
        let model = Autoencoder::new(AutoencoderConfig::default(), 3).unwrap();
        let w = random_window(2, 40);
        let a = model.forward(&w.values).unwrap();
        let b = Autoencoder::new(AutoencoderConfig::default(), 3)
            .unwrap()
            .forward(&w.values)
            .unwrap();
        assert_eq!(a.len(), 40);
        assert_eq!(
            a.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert!(model.forward(&[]).is_err());
        assert_eq!(model.encode(&w.values).unwrap().len(), 8);
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        // zero weights reconstruct zeros, so an all-zero window is a minimum
        let model = Autoencoder::zeros(AutoencoderConfig {
            hidden: vec![4, 3, 2],
            cell: CellKind::Gated,
        })
        .unwrap();
        let w = Window {
            values: vec![[0.0; CHANNELS]; 8],
            source: "z".into(),
            start_index: 0,
        };
        let (loss, grad) = batch_loss_grad(&model, &[w], &[0]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.values.iter().all(|g| g.abs() < 1e-9));
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let small = Autoencoder::new(
            AutoencoderConfig {
                hidden: vec![4, 3, 2],
                cell: CellKind::Gated,
            },
            1,
        )
        .unwrap();
        assert_eq!(
            Autoencoder::from_params(AutoencoderConfig::default(), small.params).unwrap_err(),
            NnError::LayoutMismatch
        );
    }
}
