//! Semi-supervised federated training: subject splits, client rounds, FedAvg,
//! the centralised baseline and classification metrics.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{
    batch_loss, train_epoch, Autoencoder, AutoencoderConfig, Classifier, ClassifierConfig,
    LabeledLatent, ModelParams, NnError, TrainConfig,
};
use crate::preproc::{
    apply_normalizer, fit_normalizer, LabeledWindow, NormBounds, PreprocConfig, PreprocError,
    Window,
};
use crate::seeds;
use crate::signal_io::{synth_trace_with, MotionProfile, SignalError, TraceKind};

#[derive(Debug, Error)]
pub enum FedError {
    #[error("need at least 4 subjects, got {0}")]
    TooFewSubjects(usize),
    #[error("client {0} has no windows")]
    EmptyClient(u32),
    #[error("no client updates to aggregate")]
    EmptyUpdateSet,
    #[error("client {0} reported a zero weight")]
    NonPositiveWeight(u32),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("labelled set must contain both classes")]
    SingleClassDataset,
    #[error("empty test set")]
    EmptyTestSet,
    #[error("unsupported model artifact version {0}")]
    ArtifactVersion(u32),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Preproc(#[from] PreprocError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// All windows recorded from one wearer, with ground-truth labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectData {
    pub subject_id: String,
    pub windows: Vec<LabeledWindow>,
}

/// Synthetic wearer with exactly `fall_windows` fall and `adl_windows` ADL
/// windows, cut from generated 12 s traces at 200 Hz.
pub fn synth_subject(
    subject_id: &str,
    seed: u64,
    fall_windows: usize,
    adl_windows: usize,
    preproc: &PreprocConfig,
) -> Result<SubjectData, FedError> {
    let subject_seed = seeds::derive_seed(seed, &format!("fedsim.subject.{subject_id}"), 0);
    let profile = MotionProfile::for_subject(subject_seed);
    let mut windows = Vec::with_capacity(fall_windows + adl_windows);
    for (kind, want) in [(TraceKind::Fall, fall_windows), (TraceKind::Adl, adl_windows)] {
        let mut got = 0;
        let mut trial = 0u64;
        while got < want {
            let trace_seed = seeds::derive_seed(subject_seed, "fedsim.trace", trial);
            let trace = synth_trace_with(&profile, kind, trace_seed, 12.0, 200.0)?;
            let source = format!("{subject_id}/{kind:?}/{trial}");
            let cut = preproc.trial_windows(&trace, kind == TraceKind::Fall, &source)?;
            for window in cut.into_iter().take(want - got) {
                windows.push(LabeledWindow {
                    window,
                    label: u8::from(kind == TraceKind::Fall),
                });
                got += 1;
            }
            trial += 1;
        }
    }
    Ok(SubjectData {
        subject_id: subject_id.to_string(),
        windows,
    })
}

/// Subject-level partition: L (labelled, server side), then D split into
/// federated training clients and held-out test subjects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub labeled: Vec<String>,
    pub unlabeled: Vec<String>,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

/// `|L| = round(0.3·n)`, `|D_train| = round(0.85·|D|)`, both rounding half up.
pub fn make_split(subjects: &[String], seed: u64) -> Result<SplitPlan, FedError> {
    use rand::seq::SliceRandom;
    let mut ids = subjects.to_vec();
    ids.sort();
    ids.dedup();
    let n = ids.len();
    if n < 4 {
        return Err(FedError::TooFewSubjects(n));
    }
    let mut rng = seeds::stream_rng(seed, "fedsim.split", 0);
    ids.shuffle(&mut rng);
    let n_labeled = (3 * n + 5) / 10;
    let unlabeled = ids.split_off(n_labeled);
    let m = unlabeled.len();
    let n_train = (85 * m + 50) / 100;
    let mut labeled = ids;
    let mut train = unlabeled[..n_train].to_vec();
    let mut test = unlabeled[n_train..].to_vec();
    labeled.sort();
    train.sort();
    test.sort();
    let mut unlabeled = unlabeled;
    unlabeled.sort();
    Ok(SplitPlan {
        labeled,
        unlabeled,
        train,
        test,
        seed,
    })
}

/// One edge device. Its windows never leave this value; it only hands back
/// a [`ClientUpdate`].
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: u32,
    windows: Vec<Window>,
}

/// What the server receives from a client after a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: u32,
    pub params: ModelParams,
    /// Number of local training windows (`r_i`).
    pub weight: usize,
    pub local_loss: f64,
}

impl ClientState {
    pub fn new(client_id: u32, windows: Vec<Window>) -> Result<Self, FedError> {
        if windows.is_empty() {
            return Err(FedError::EmptyClient(client_id));
        }
        Ok(Self { client_id, windows })
    }

    pub fn weight(&self) -> usize {
        self.windows.len()
    }

    /// One local epoch starting from the broadcast parameters.
    pub fn local_train_round(
        &self,
        global: &ModelParams,
        model: &AutoencoderConfig,
        config: &TrainConfig,
        round: usize,
    ) -> Result<ClientUpdate, FedError> {
        let mut ae = Autoencoder::from_params(model.clone(), global.clone())?;
        let index = (u64::from(self.client_id) << 32) | round as u64;
        let mut rng = seeds::stream_rng(config.seed, "fedsim.client", index);
        let local_loss = train_epoch(&mut ae, &self.windows, config, &mut rng)?;
        Ok(ClientUpdate {
            client_id: self.client_id,
            params: ae.params,
            weight: self.windows.len(),
            local_loss,
        })
    }
}

/// Weighted average `Σ r_i θ_i / Σ r_i`.
///
/// Updates are summed in client-id order, so the result does not depend on
/// the order they arrived in.
pub fn fedavg(updates: &[ClientUpdate]) -> Result<ModelParams, FedError> {
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client_id);
    let first = sorted.first().ok_or(FedError::EmptyUpdateSet)?;
    if let Some(u) = sorted.iter().find(|u| u.weight == 0) {
        return Err(FedError::NonPositiveWeight(u.client_id));
    }
    if sorted.iter().any(|u| !u.params.compatible(&first.params)) {
        return Err(NnError::LayoutMismatch.into());
    }
    let total: usize = sorted.iter().map(|u| u.weight).sum();
    let total = total as f64;
    let mut out = first.params.clone();
    let w0 = first.weight as f64 / total;
    out.values.iter_mut().for_each(|v| *v *= w0);
    for u in &sorted[1..] {
        let w = u.weight as f64 / total;
        for (acc, v) in out.values.iter_mut().zip(&u.params.values) {
            *acc += w * v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub mean_recon_loss: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub model: Autoencoder,
    pub log: Vec<RoundLog>,
}

/// Broadcast, local epoch, aggregate; `rounds` times. Clients train in
/// parallel; the log records the client-weighted mean local loss.
pub fn run_federated(
    clients: &[ClientState],
    initial: Autoencoder,
    rounds: usize,
    config: &TrainConfig,
) -> Result<TrainingRun, FedError> {
    if clients.is_empty() {
        return Err(FedError::EmptyUpdateSet);
    }
    config.validate()?;
    let model_config = initial.config.clone();
    let mut global = initial.params;
    let mut log = Vec::with_capacity(rounds);
    for round in 0..rounds {
        let start = Instant::now();
        let updates = clients
            .par_iter()
            .map(|c| c.local_train_round(&global, &model_config, config, round))
            .collect::<Result<Vec<_>, _>>()?;
        global = fedavg(&updates)?;
        let total: usize = updates.iter().map(|u| u.weight).sum();
        let mean = updates
            .iter()
            .map(|u| u.local_loss * u.weight as f64)
            .sum::<f64>()
            / total as f64;
        log::info!("round {round}: mean local loss {mean:.6}");
        log.push(RoundLog {
            round,
            mean_recon_loss: mean,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(TrainingRun {
        model: Autoencoder::from_params(model_config, global)?,
        log,
    })
}

/// Centralised baseline: plain epochs over the pooled training windows.
pub fn run_centralized(
    windows: &[Window],
    initial: Autoencoder,
    epochs: usize,
    config: &TrainConfig,
) -> Result<TrainingRun, FedError> {
    if windows.is_empty() {
        return Err(FedError::EmptyDataset);
    }
    config.validate()?;
    let mut model = initial;
    let mut log = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let start = Instant::now();
        let mut rng = seeds::stream_rng(config.seed, "fedsim.central", epoch as u64);
        let loss = train_epoch(&mut model, windows, config, &mut rng)?;
        log.push(RoundLog {
            round: epoch,
            mean_recon_loss: loss,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(TrainingRun { model, log })
}

/// `round,mean_recon_loss,wall_ms`.
pub fn write_round_log<W: std::io::Write>(log: &[RoundLog], out: W) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in log {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Mean reconstruction loss over a window set.
pub fn reconstruction_loss(model: &Autoencoder, windows: &[Window]) -> f64 {
    batch_loss(model, windows)
}

/// Train the head on the frozen encoder. Latent codes are computed once and
/// their per-dimension statistics on `labeled` fix the head's input scaling.
pub fn train_classifier(
    autoencoder: &Autoencoder,
    labeled: &[LabeledWindow],
    head_hidden: Vec<usize>,
    epochs: usize,
    config: &TrainConfig,
) -> Result<(Classifier, Vec<f64>), FedError> {
    if labeled.is_empty() {
        return Err(FedError::EmptyDataset);
    }
    let first = labeled[0].label;
    if labeled.iter().all(|s| s.label == first) {
        return Err(FedError::SingleClassDataset);
    }
    let mut clf = Classifier::from_encoder(autoencoder, head_hidden, 2, config.seed)?;
    let latents = labeled
        .par_iter()
        .map(|s| {
            Ok(LabeledLatent {
                latent: clf.latent(&s.window.values)?,
                label: s.label as usize,
            })
        })
        .collect::<Result<Vec<_>, NnError>>()?;
    let (mean, std) = latent_stats(&latents);
    clf.set_latent_scaling(&mean, &std);
    let mut log = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut rng = seeds::stream_rng(config.seed, "fedsim.classifier", epoch as u64);
        log.push(train_epoch(&mut clf, &latents, config, &mut rng)?);
    }
    Ok((clf, log))
}

/// Per-dimension mean and population standard deviation.
fn latent_stats(latents: &[LabeledLatent]) -> (Vec<f64>, Vec<f64>) {
    let d = latents[0].latent.len();
    let n = latents.len() as f64;
    let mut mean = vec![0.0; d];
    for s in latents {
        for (m, v) in mean.iter_mut().zip(&s.latent) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; d];
    for s in latents {
        for ((acc, v), m) in var.iter_mut().zip(&s.latent).zip(&mean) {
            *acc += (v - m) * (v - m) / n;
        }
    }
    (mean, var.into_iter().map(f64::sqrt).collect())
}

/// Confusion counts with fall (label 1) as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub acc: f64,
    pub pr: f64,
    pub re: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassificationMetrics {
    /// Ratios from counts; an empty denominator yields 0.
    pub fn from_counts(tp: usize, tn: usize, fp: usize, fn_: usize) -> Self {
        let pr = ratio(tp, tp + fp);
        let re = ratio(tp, tp + fn_);
        let f1 = if pr + re > 0.0 { 2.0 * pr * re / (pr + re) } else { 0.0 };
        Self {
            tp,
            tn,
            fp,
            fn_,
            acc: ratio(tp + tn, tp + tn + fp + fn_),
            pr,
            re,
            f1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn evaluate(model: &Classifier, test: &[LabeledWindow]) -> Result<ClassificationMetrics, FedError> {
    if test.is_empty() {
        return Err(FedError::EmptyTestSet);
    }
    let preds = test
        .par_iter()
        .map(|s| model.predict(&s.window.values))
        .collect::<Result<Vec<_>, _>>()?;
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (p, s) in preds.iter().zip(test) {
        match (*p == 1, s.label == 1) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(ClassificationMetrics::from_counts(tp, tn, fp, fn_))
}

pub const ARTIFACT_VERSION: u32 = 1;

/// Everything needed to classify raw traces: cleaning settings, frozen
/// normalisation bounds and the classifier weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FallModelArtifact {
    pub version: u32,
    pub preproc: PreprocConfig,
    pub norm_bounds: NormBounds,
    pub classifier: ClassifierConfig,
    pub params: ModelParams,
}

impl FallModelArtifact {
    pub fn new(preproc: PreprocConfig, norm_bounds: NormBounds, model: &Classifier) -> Self {
        Self {
            version: ARTIFACT_VERSION,
            preproc,
            norm_bounds,
            classifier: model.config.clone(),
            params: model.params.clone(),
        }
    }

    pub fn classifier(&self) -> Result<Classifier, FedError> {
        if self.version != ARTIFACT_VERSION {
            return Err(FedError::ArtifactVersion(self.version));
        }
        Ok(Classifier::from_params(self.classifier.clone(), self.params.clone())?)
    }

    pub fn save(&self, path: &Path) -> Result<(), FedError> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FedError> {
        let artifact: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if artifact.version != ARTIFACT_VERSION {
            return Err(FedError::ArtifactVersion(artifact.version));
        }
        Ok(artifact)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingMode {
    Federated,
    Centralized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub autoencoder: AutoencoderConfig,
    /// Local-epoch settings for the autoencoder (learning rate, batch, seed).
    pub train: TrainConfig,
    /// Federated rounds, or epochs for the centralised baseline.
    pub rounds: usize,
    pub head_hidden: Vec<usize>,
    pub head: TrainConfig,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            autoencoder: AutoencoderConfig::default(),
            train: TrainConfig::default(),
            rounds: 50,
            head_hidden: vec![16],
            head: TrainConfig {
                learning_rate: 0.1,
                epochs: 50,
                batch_size: 32,
                seed: 1,
            },
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub split: SplitPlan,
    pub norm_bounds: NormBounds,
    pub autoencoder: Autoencoder,
    pub classifier: Classifier,
    pub round_log: Vec<RoundLog>,
    pub head_log: Vec<f64>,
    pub metrics: ClassificationMetrics,
}

/// Full protocol: split subjects, fit normalisation on L, train the
/// autoencoder on D_train (federated or pooled), train the head on L and
/// evaluate on the held-out D_test subjects.
pub fn run_experiment(
    subjects: &[SubjectData],
    mode: TrainingMode,
    config: &ExperimentConfig,
) -> Result<ExperimentResult, FedError> {
    let ids: Vec<String> = subjects.iter().map(|s| s.subject_id.clone()).collect();
    let split = make_split(&ids, config.seed)?;
    let by_id = |id: &String| subjects.iter().find(|s| &s.subject_id == id).expect("split id");

    let labeled_raw: Vec<&LabeledWindow> = split
        .labeled
        .iter()
        .flat_map(|id| &by_id(id).windows)
        .collect();
    let norm_bounds = fit_normalizer(labeled_raw.iter().map(|s| &s.window))?;
    let normalise = |s: &LabeledWindow| LabeledWindow {
        window: apply_normalizer(&s.window, &norm_bounds),
        label: s.label,
    };
    let labeled: Vec<LabeledWindow> = labeled_raw.into_iter().map(normalise).collect();
    let test: Vec<LabeledWindow> = split
        .test
        .iter()
        .flat_map(|id| by_id(id).windows.iter().map(normalise))
        .collect();

    // clients see their own windows, without labels
    let clients = split
        .train
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let windows = by_id(id)
                .windows
                .iter()
                .map(|s| apply_normalizer(&s.window, &norm_bounds))
                .collect();
            ClientState::new(i as u32, windows)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let initial = Autoencoder::new(config.autoencoder.clone(), seeds::derive_seed(config.seed, "fedsim.init", 0))?;
    let run = match mode {
        TrainingMode::Federated => run_federated(&clients, initial, config.rounds, &config.train)?,
        TrainingMode::Centralized => {
            let pooled: Vec<Window> = clients.iter().flat_map(|c| c.windows.iter().cloned()).collect();
            run_centralized(&pooled, initial, config.rounds, &config.train)?
        }
    };
    let (classifier, head_log) = train_classifier(
        &run.model,
        &labeled,
        config.head_hidden.clone(),
        config.head.epochs,
        &config.head,
    )?;
    let metrics = evaluate(&classifier, &test)?;
    Ok(ExperimentResult {
        split,
        norm_bounds,
        autoencoder: run.model,
        classifier,
        round_log: run.log,
        head_log,
        metrics,
    })
}
