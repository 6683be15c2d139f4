//! The `fallchain` binary: subcommands, layered configuration and exit codes.
//!
//! Configuration is resolved once, before any stage runs: built-in defaults,
//! then the TOML file given by `--config`, then `FALLCHAIN_*` environment
//! variables, then command-line flags. Exit status is 0 on success, 1 when an
//! input or the configuration is invalid and 2 when a stage fails at runtime.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fedsim::{
    self, run_experiment, synth_subject, write_round_log, ExperimentConfig, FallModelArtifact, FedError,
    SubjectData, TrainingMode,
};
use crate::fingerprint::{
    fill_missing, render_heatmap, FingerprintError, FingerprintTable, OccupancyRaster, SurveyLogs,
    DEFAULT_FLOOR_DBM,
};
use crate::locmodel::{samples_from_table, FeatureMode, LocError, LocModel, LocSample, RegressorSpec};
use crate::mission::{
    combined_reliability, default_anchors, monte_carlo, run_scenario, serial_reliability, synth_room,
    synth_survey, Artifacts, MissionError, RadioModel, Reliability, ReliabilityModel, SimScenario,
};
use crate::nn::NnError;
use crate::preproc::{apply_normalizer, LabeledWindow, PreprocConfig, PreprocError};
use crate::seeds;
use crate::signal_io::{parse_trial, trial_to_samples, ChannelSelector, SignalError, TrialMeta, SISFALL_RATE_HZ};
use crate::vision::{
    eval_detection_set, extract_features, load_class_map, load_detections, load_times, load_truths,
    pair_frames, synth_scene, BBox, Frame, SceneClassifier, SceneClassifierSpec, SceneSample, VisionError,
    FEATURE_LEN, FEATURE_NAMES,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

pub const DATASET_VERSION: u32 = 1;

/// A problem with the inputs or the configuration (exit 1).
#[derive(Debug, Error)]
#[error("{0}")]
pub struct Invalid(pub String);

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "fallchain", version, about = "Simulate, train and evaluate a staged fall-detection pipeline")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "FALLCHAIN_CONFIG")]
    pub config: Option<PathBuf>,
    /// Root seed; every stage derives its own stream from it.
    #[arg(long, global = true, env = "FALLCHAIN_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "FALLCHAIN_JOBS")]
    pub jobs: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cut SisFall trials (or synthetic wearers) into labelled windows.
    Ingest(IngestArgs),
    /// Semi-supervised federated training of the fall classifier.
    TrainFed(TrainArgs),
    /// Same protocol with the autoencoder trained on pooled data.
    TrainCentral(TrainArgs),
    /// Score a fall model on a window dataset.
    EvalFall(EvalFallArgs),
    /// Fingerprint table and per-anchor heatmaps from survey logs.
    BuildMap(BuildMapArgs),
    /// Fit a localization model on a fingerprint table.
    TrainLoc(TrainLocArgs),
    /// Localization error of a model on a fingerprint table.
    EvalLoc(EvalLocArgs),
    /// Scene feature vectors from detector output.
    ExtractFeatures(ExtractArgs),
    /// Fit the fallen / not-fallen scene classifier.
    TrainVision(TrainVisionArgs),
    /// Detection metrics (and classifier accuracy) on a labelled frame set.
    EvalVision(EvalVisionArgs),
    /// Run mission scenarios end to end.
    Simulate(SimulateArgs),
    /// Aggregate results into report.json, report.csv and heatmaps.
    Report(ReportArgs),
    /// Write a synthetic workspace: map, survey logs, detections, scenarios.
    Synth(SynthArgs),
    /// Print the resolved configuration.
    Config,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// SisFall root directory; synthetic wearers are generated when absent.
    #[arg(long)]
    pub sisfall: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write every window as CSV rows.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset written by `ingest`; synthesized from the config when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for model.json, round_log.csv and metrics.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Federated rounds (or centralised epochs).
    #[arg(long, env = "FALLCHAIN_ROUNDS")]
    pub rounds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalFallArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildMapArgs {
    /// Directory with pose.csv, drift.csv and rssi.csv.
    #[arg(long)]
    pub logs: PathBuf,
    /// Occupancy map (PGM with a `.meta` sidecar).
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "FALLCHAIN_FLOOR_DBM", allow_hyphen_values = true)]
    pub floor_dbm: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainLocArgs {
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "FALLCHAIN_FEATURES")]
    pub features: Option<FeatureMode>,
    #[arg(long, env = "FALLCHAIN_FLOOR_DBM", allow_hyphen_values = true)]
    pub floor_dbm: Option<f64>,
    /// knn, decision_tree, random_forest or mlp.
    #[arg(long, env = "FALLCHAIN_REGRESSOR")]
    pub regressor: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalLocArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub class_map: PathBuf,
    /// `frame,fallen` rows (fallen is 0 or 1).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainVisionArgs {
    /// CSV written by `extract-features`.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// logistic or random_forest.
    #[arg(long, env = "FALLCHAIN_CLASSIFIER")]
    pub classifier: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalVisionArgs {
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub truths: PathBuf,
    #[arg(long)]
    pub class_map: PathBuf,
    /// `frame,seconds` inference times.
    #[arg(long)]
    pub times: Option<PathBuf>,
    /// Scene classifier to score against `--labels`.
    #[arg(long, requires = "labels")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Fall,
    FalseTrigger,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario JSON file.
    #[arg(long, conflicts_with = "preset")]
    pub scenario: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub fall_model: Option<PathBuf>,
    #[arg(long)]
    pub loc_model: Option<PathBuf>,
    #[arg(long)]
    pub vision_model: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Monte-Carlo repetitions with per-run seeds; 1 writes the full logs.
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Output directories of `simulate`.
    #[arg(long)]
    pub sim: Vec<PathBuf>,
    /// Output directory of `train-fed` / `train-central`.
    #[arg(long)]
    pub fall: Vec<PathBuf>,
    /// JSON written by `eval-loc`.
    #[arg(long)]
    pub loc: Option<PathBuf>,
    /// JSON written by `eval-vision`.
    #[arg(long)]
    pub vision: Option<PathBuf>,
    /// Fingerprint table and map for heatmap rasters.
    #[arg(long, requires = "map")]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub detect_fail: Option<f64>,
    #[arg(long)]
    pub nav_fail: Option<f64>,
    #[arg(long)]
    pub vision_fail: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Labelled vision frames to generate.
    #[arg(long, default_value_t = 200)]
    pub frames: usize,
    /// Survey waypoints for the robot.
    #[arg(long, default_value_t = 12)]
    pub waypoints: usize,
}

/// Synthetic wearer population used when no dataset is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub subjects: usize,
    pub fall_windows: usize,
    pub adl_windows: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { subjects: 10, fall_windows: 40, adl_windows: 40 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocConfig {
    pub floor_dbm: f64,
    pub features: FeatureMode,
    pub regressor: RegressorSpec,
}

impl Default for LocConfig {
    fn default() -> Self {
        Self {
            floor_dbm: DEFAULT_FLOOR_DBM,
            features: FeatureMode::Engineered,
            regressor: RegressorSpec::random_forest(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VisionConfig {
    pub classifier: SceneClassifierSpec,
}

impl Default for VisionConfig {
    fn default() -> Self {
        Self { classifier: SceneClassifierSpec::logistic() }
    }
}

/// Fully resolved settings. Stage seeds inside `experiment` are derived from
/// the top-level `seed` and need not be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// 0 = one thread per core.
    pub jobs: usize,
    pub preproc: PreprocConfig,
    pub sensor: ChannelSelector,
    pub synth: SynthConfig,
    pub experiment: ExperimentConfig,
    pub loc: LocConfig,
    pub vision: VisionConfig,
    pub reliability: ReliabilityModel,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            jobs: 0,
            preproc: PreprocConfig::default(),
            sensor: ChannelSelector::default(),
            synth: SynthConfig::default(),
            experiment: ExperimentConfig::default(),
            loc: LocConfig::default(),
            vision: VisionConfig::default(),
            reliability: ReliabilityModel::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// File values, then the global flags (which already carry any
    /// `FALLCHAIN_*` environment value).
    pub fn resolve(cli: &Cli) -> anyhow::Result<Self> {
        let mut config = match &cli.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
                Self::from_toml(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?
            }
            None => Self::default(),
        };
        if let Some(seed) = cli.seed {
            config.seed = seed;
        }
        if let Some(jobs) = cli.jobs {
            config.jobs = jobs;
        }
        config.preproc.validate().map_err(|e| invalid(format!("preproc: {e}")))?;
        config.experiment.seed = config.seed;
        config.experiment.train.seed = seeds::derive_seed(config.seed, "cli.train", 0);
        config.experiment.head.seed = seeds::derive_seed(config.seed, "cli.head", 0);
        config.reliability.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(config)
    }
}

/// Windows from `ingest`, still in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub version: u32,
    pub preproc: PreprocConfig,
    pub subjects: Vec<SubjectData>,
}

impl Dataset {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let data: Self = read_json(path)?;
        if data.version != DATASET_VERSION {
            return Err(invalid(format!("{}: unsupported dataset version {}", path.display(), data.version)));
        }
        Ok(data)
    }
}

/// Parse `argv`, run, and map the outcome to an exit status. Errors go to
/// stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_INVALID,
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    let config = RunConfig::resolve(cli)?;
    if config.jobs > 0 {
        // the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(config.jobs).build_global();
    }
    match &cli.command {
        Command::Ingest(a) => ingest(&config, a),
        Command::TrainFed(a) => train(&config, a, TrainingMode::Federated),
        Command::TrainCentral(a) => train(&config, a, TrainingMode::Centralized),
        Command::EvalFall(a) => eval_fall(a),
        Command::BuildMap(a) => build_map(&config, a),
        Command::TrainLoc(a) => train_loc(&config, a),
        Command::EvalLoc(a) => eval_loc(a),
        Command::ExtractFeatures(a) => extract(a),
        Command::TrainVision(a) => train_vision(&config, a),
        Command::EvalVision(a) => eval_vision(a),
        Command::Simulate(a) => simulate(cli, a),
        Command::Report(a) => report(&config, a),
        Command::Synth(a) => synth(&config, a),
        Command::Config => {
            print!("{}", toml::to_string(&config)?);
            Ok(())
        }
    }
}

/// 1 for bad inputs or configuration, 2 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let validation = err.chain().any(|cause| {
        cause.is::<Invalid>()
            || cause.is::<toml::de::Error>()
            || cause.is::<serde_json::Error>()
            || cause.is::<clap::Error>()
            || cause.downcast_ref::<std::io::Error>().is_some_and(io_invalid)
            || cause.downcast_ref::<SignalError>().is_some()
            || cause.downcast_ref::<PreprocError>().is_some_and(preproc_invalid)
            || cause.downcast_ref::<FingerprintError>().is_some_and(fingerprint_invalid)
            || cause.downcast_ref::<LocError>().is_some_and(loc_invalid)
            || cause.downcast_ref::<VisionError>().is_some_and(vision_invalid)
            || cause.downcast_ref::<FedError>().is_some_and(fed_invalid)
            || cause.downcast_ref::<MissionError>().is_some_and(mission_invalid)
            || cause.downcast_ref::<NnError>().is_some_and(|e| matches!(e, NnError::InvalidConfig(_)))
    });
    if validation {
        EXIT_INVALID
    } else {
        EXIT_RUNTIME
    }
}

fn io_invalid(e: &std::io::Error) -> bool {
    matches!(e.kind(), std::io::ErrorKind::NotFound | std::io::ErrorKind::InvalidData)
}

fn preproc_invalid(e: &PreprocError) -> bool {
    matches!(
        e,
        PreprocError::InvalidConfig(_) | PreprocError::InvalidAlpha(_) | PreprocError::UnknownCode(_) | PreprocError::TooShort { .. }
    )
}

fn fingerprint_invalid(e: &FingerprintError) -> bool {
    match e {
        FingerprintError::Io(io) => io_invalid(io),
        FingerprintError::Image(image::ImageError::IoError(io)) => io_invalid(io),
        _ => true,
    }
}

fn loc_invalid(e: &LocError) -> bool {
    match e {
        LocError::Io(io) => io_invalid(io),
        LocError::Nn(nn) => matches!(nn, NnError::InvalidConfig(_)),
        _ => true,
    }
}

fn vision_invalid(e: &VisionError) -> bool {
    match e {
        VisionError::Io(io) => io_invalid(io),
        _ => true,
    }
}

fn fed_invalid(e: &FedError) -> bool {
    match e {
        FedError::Io(io) => io_invalid(io),
        FedError::Nn(nn) => matches!(nn, NnError::InvalidConfig(_)),
        FedError::Preproc(p) => preproc_invalid(p),
        FedError::Signal(_) | FedError::Json(_) => true,
        FedError::TooFewSubjects(_)
        | FedError::ArtifactVersion(_)
        | FedError::SingleClassDataset
        | FedError::EmptyDataset
        | FedError::EmptyTestSet
        | FedError::EmptyClient(_) => true,
        FedError::EmptyUpdateSet | FedError::NonPositiveWeight(_) => false,
    }
}

fn mission_invalid(e: &MissionError) -> bool {
    match e {
        MissionError::MissingArtifact(_)
        | MissionError::InvalidRate(_)
        | MissionError::InvalidScenario(_)
        | MissionError::OutOfBounds(_)
        | MissionError::BlockedEndpoint(_)
        | MissionError::Json(_) => true,
        MissionError::Io(io) => io_invalid(io),
        MissionError::Fingerprint(f) => fingerprint_invalid(f),
        MissionError::Loc(l) => loc_invalid(l),
        MissionError::Fed(f) => fed_invalid(f),
        MissionError::NoPath(..) | MissionError::IllegalTransition { .. } | MissionError::InvalidLog(_) => false,
    }
}

fn require(path: &Path, what: &str) -> anyhow::Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(invalid(format!("{what} `{}` does not exist", path.display())))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    require(path, "input")?;
    let bytes = std::fs::read(path).with_context(|| path.display().to_string())?;
    serde_json::from_slice(&bytes).with_context(|| format!("{}: malformed JSON", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| path.display().to_string())
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> anyhow::Result<()> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

// ---- fall stage ------------------------------------------------------------

fn collect_txt(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.with_context(|| dir.display().to_string())?;
        if entry.file_type().is_file() && entry.path().extension().is_some_and(|e| e == "txt") {
            out.push(entry.into_path());
        }
    }
    Ok(out)
}

fn ingest_sisfall(config: &RunConfig, root: &Path) -> anyhow::Result<Vec<SubjectData>> {
    require(root, "SisFall directory")?;
    let mut files = collect_txt(root)?;
    files.sort();
    let mut subjects: BTreeMap<String, Vec<LabeledWindow>> = BTreeMap::new();
    for path in &files {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let Ok(meta) = TrialMeta::from_file_name(name) else {
            log::debug!("skipping {}", path.display());
            continue;
        };
        let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
        let trial = parse_trial(&text, meta.clone()).with_context(|| path.display().to_string())?;
        let samples = trial_to_samples(&trial, &config.sensor, SISFALL_RATE_HZ);
        let fall = meta.activity.is_fall();
        let source = name.trim_end_matches(".txt");
        let windows = config
            .preproc
            .trial_windows(&samples, fall, source)
            .with_context(|| path.display().to_string())?;
        subjects
            .entry(meta.subject_id.clone())
            .or_default()
            .extend(windows.into_iter().map(|window| LabeledWindow { window, label: u8::from(fall) }));
    }
    if subjects.is_empty() {
        return Err(invalid(format!("no SisFall trial files under `{}`", root.display())));
    }
    Ok(subjects
        .into_iter()
        .map(|(subject_id, windows)| SubjectData { subject_id, windows })
        .collect())
}

fn synth_dataset(config: &RunConfig) -> anyhow::Result<Dataset> {
    let s = &config.synth;
    let subjects = (1..=s.subjects)
        .map(|i| {
            synth_subject(&format!("SA{i:02}"), config.seed, s.fall_windows, s.adl_windows, &config.preproc)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset { version: DATASET_VERSION, preproc: config.preproc.clone(), subjects })
}

fn write_windows_csv(data: &Dataset, path: &Path) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["subject", "source", "start_index", "label", "frame", "ax", "ay", "az", "wx", "wy", "wz"])?;
    for s in &data.subjects {
        for lw in &s.windows {
            for (k, f) in lw.window.values.iter().enumerate() {
                let mut row = vec![
                    s.subject_id.clone(),
                    lw.window.source.clone(),
                    lw.window.start_index.to_string(),
                    lw.label.to_string(),
                    k.to_string(),
                ];
                row.extend(f.iter().map(f64::to_string));
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn ingest(config: &RunConfig, args: &IngestArgs) -> anyhow::Result<()> {
    let data = match &args.sisfall {
        Some(root) => Dataset {
            version: DATASET_VERSION,
            preproc: config.preproc.clone(),
            subjects: ingest_sisfall(config, root)?,
        },
        None => synth_dataset(config)?,
    };
    write_json(&args.out, &data)?;
    if let Some(csv) = &args.csv {
        write_windows_csv(&data, csv)?;
    }
    let windows: usize = data.subjects.iter().map(|s| s.windows.len()).sum();
    println!("{} subjects, {windows} windows -> {}", data.subjects.len(), args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainReport<'a> {
    mode: TrainingMode,
    rounds: usize,
    split: &'a fedsim::SplitPlan,
    metrics: &'a fedsim::ClassificationMetrics,
    head_loss: &'a [f64],
}

fn train(config: &RunConfig, args: &TrainArgs, mode: TrainingMode) -> anyhow::Result<()> {
    let data = match &args.data {
        Some(path) => Dataset::load(path)?,
        None => synth_dataset(config)?,
    };
    let mut experiment = config.experiment.clone();
    if let Some(r) = args.rounds {
        experiment.rounds = r;
    }
    let result = run_experiment(&data.subjects, mode, &experiment)?;
    std::fs::create_dir_all(&args.out)?;
    FallModelArtifact::new(data.preproc.clone(), result.norm_bounds.clone(), &result.classifier)
        .save(&args.out.join("model.json"))?;
    write_round_log(&result.round_log, std::fs::File::create(args.out.join("round_log.csv"))?)?;
    write_json(
        &args.out.join("metrics.json"),
        &TrainReport {
            mode,
            rounds: experiment.rounds,
            split: &result.split,
            metrics: &result.metrics,
            head_loss: &result.head_log,
        },
    )?;
    let m = &result.metrics;
    println!("{mode:?}: acc {:.4} pr {:.4} re {:.4} f1 {:.4}", m.acc, m.pr, m.re, m.f1);
    Ok(())
}

fn eval_fall(args: &EvalFallArgs) -> anyhow::Result<()> {
    require(&args.model, "model")?;
    let artifact = FallModelArtifact::load(&args.model).with_context(|| args.model.display().to_string())?;
    let data = Dataset::load(&args.data)?;
    if data.preproc != artifact.preproc {
        return Err(invalid("dataset was cut with different preprocessing settings than the model"));
    }
    let model = artifact.classifier()?;
    let windows: Vec<LabeledWindow> = data
        .subjects
        .iter()
        .flat_map(|s| &s.windows)
        .map(|lw| LabeledWindow { window: apply_normalizer(&lw.window, &artifact.norm_bounds), label: lw.label })
        .collect();
    let metrics = fedsim::evaluate(&model, &windows)?;
    emit_json(args.out.as_deref(), &metrics)
}

// ---- localization ----------------------------------------------------------

fn mac_file_name(mac: &crate::fingerprint::Mac) -> String {
    mac.to_string().replace(':', "-")
}

#[derive(Serialize)]
struct MapSummary {
    rows: usize,
    anchors: Vec<String>,
    /// Rows outside the map, per anchor heatmap.
    skipped: BTreeMap<String, usize>,
}

fn write_heatmaps(table: &FingerprintTable, raster: &OccupancyRaster, dir: &Path) -> anyhow::Result<BTreeMap<String, usize>> {
    std::fs::create_dir_all(dir)?;
    let mut skipped = BTreeMap::new();
    for mac in &table.anchors {
        let heat = render_heatmap(table, raster, mac)?;
        let stem = mac_file_name(mac);
        heat.write_csv(std::fs::File::create(dir.join(format!("{stem}.csv")))?)?;
        heat.write_pgm(&dir.join(format!("{stem}.pgm")), &dir.join(format!("{stem}_mask.pgm")))?;
        skipped.insert(mac.to_string(), heat.skipped);
    }
    Ok(skipped)
}

fn build_map(config: &RunConfig, args: &BuildMapArgs) -> anyhow::Result<()> {
    require(&args.logs, "log directory")?;
    require(&args.map, "map")?;
    let floor = args.floor_dbm.unwrap_or(config.loc.floor_dbm);
    let logs = SurveyLogs::load(&args.logs).with_context(|| args.logs.display().to_string())?;
    let raster = OccupancyRaster::load(&args.map).with_context(|| args.map.display().to_string())?;
    let table = logs.to_table()?;
    std::fs::create_dir_all(&args.out)?;
    table.write_csv(std::fs::File::create(args.out.join("table.csv"))?)?;
    fill_missing(&table, floor).write_csv(std::fs::File::create(args.out.join("table_filled.csv"))?)?;
    let skipped = write_heatmaps(&table, &raster, &args.out.join("heatmaps"))?;
    write_json(
        &args.out.join("map_summary.json"),
        &MapSummary {
            rows: table.rows.len(),
            anchors: table.anchors.iter().map(ToString::to_string).collect(),
            skipped,
        },
    )?;
    println!("{} rows, {} anchors -> {}", table.rows.len(), table.anchors.len(), args.out.display());
    Ok(())
}

fn read_table(path: &Path) -> anyhow::Result<FingerprintTable> {
    require(path, "fingerprint table")?;
    let file = std::fs::File::open(path)?;
    FingerprintTable::read_csv(file).with_context(|| path.display().to_string())
}

fn train_loc(config: &RunConfig, args: &TrainLocArgs) -> anyhow::Result<()> {
    let table = read_table(&args.table)?;
    let floor = args.floor_dbm.unwrap_or(config.loc.floor_dbm);
    let mode = args.features.unwrap_or(config.loc.features);
    let spec = match &args.regressor {
        Some(name) => RegressorSpec::by_name(name).ok_or_else(|| invalid(format!("unknown regressor `{name}`")))?,
        None => config.loc.regressor.clone(),
    };
    let samples = samples_from_table(&table, floor);
    let model = LocModel::fit(
        table.anchors.clone(),
        &samples,
        mode,
        floor,
        spec,
        seeds::derive_seed(config.seed, "cli.locmodel", 0),
    )?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    model.save(&args.out)?;
    let fit = model.evaluate(&samples)?;
    println!("{} on {} rows: training mde {:.4} m", model.regressor.spec.name(), samples.len(), fit.mde);
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct LocReport {
    model: String,
    features: FeatureMode,
    rows: usize,
    mae: f64,
    mse: f64,
    mde: f64,
}

/// Table columns reordered to the model's anchor list; anchors the table
/// lacks read as the floor.
fn align_to_model(table: &FingerprintTable, model: &LocModel) -> Vec<LocSample> {
    let cols: Vec<Option<usize>> = model
        .anchors
        .iter()
        .map(|m| table.anchors.iter().position(|a| a == m))
        .collect();
    table
        .rows
        .iter()
        .map(|r| LocSample {
            rssi: cols
                .iter()
                .map(|c| c.and_then(|c| r.rssi[c]).unwrap_or(model.floor_dbm))
                .collect(),
            target: [r.x, r.y],
        })
        .collect()
}

fn eval_loc(args: &EvalLocArgs) -> anyhow::Result<()> {
    if !args.model.exists() {
        return Err(anyhow!(LocError::NotFitted).context(format!("no localization model at `{}`", args.model.display())));
    }
    let model = LocModel::load(&args.model).with_context(|| args.model.display().to_string())?;
    let table = read_table(&args.table)?;
    let samples = align_to_model(&table, &model);
    let m = model.evaluate(&samples)?;
    emit_json(
        args.out.as_deref(),
        &LocReport {
            model: model.regressor.spec.name().into(),
            features: model.mode,
            rows: samples.len(),
            mae: m.mae,
            mse: m.mse,
            mde: m.mde,
        },
    )
}

// ---- vision ----------------------------------------------------------------

fn load_labels(path: &Path) -> anyhow::Result<BTreeMap<String, bool>> {
    require(path, "label file")?;
    let text = std::fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("frame")) {
            continue;
        }
        let parse = || -> Option<(String, bool)> {
            let (frame, v) = line.split_once(',')?;
            let fallen = match v.trim() {
                "1" | "true" => true,
                "0" | "false" => false,
                _ => return None,
            };
            Some((frame.trim().to_string(), fallen))
        };
        let (frame, fallen) =
            parse().ok_or_else(|| invalid(format!("{}:{}: expected `frame,0|1`", path.display(), i + 1)))?;
        out.insert(frame, fallen);
    }
    Ok(out)
}

fn extract(args: &ExtractArgs) -> anyhow::Result<()> {
    require(&args.detections, "detection directory")?;
    require(&args.class_map, "class map")?;
    let map = load_class_map(&args.class_map)?;
    let dets = load_detections(&args.detections, &map)?;
    let labels = args.labels.as_deref().map(load_labels).transpose()?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(&args.out)?;
    let mut header = vec!["frame"];
    header.extend(FEATURE_NAMES);
    header.push("fallen");
    w.write_record(&header)?;
    for (frame, d) in &dets {
        let mut row = vec![frame.clone()];
        row.extend(extract_features(d).iter().map(f64::to_string));
        row.push(match labels.as_ref().and_then(|l| l.get(frame)) {
            Some(true) => "1".into(),
            Some(false) => "0".into(),
            None => String::new(),
        });
        w.write_record(&row)?;
    }
    w.flush()?;
    println!("{} frames -> {}", dets.len(), args.out.display());
    Ok(())
}

/// Labelled rows of a feature CSV; unlabelled rows are skipped.
fn read_feature_csv(path: &Path) -> anyhow::Result<Vec<SceneSample>> {
    require(path, "feature file")?;
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    if header.len() != FEATURE_LEN + 2 {
        return Err(invalid(format!("{}:1: expected {} columns, got {}", path.display(), FEATURE_LEN + 2, header.len())));
    }
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.with_context(|| format!("{}:{line}", path.display()))?;
        let label = record.get(FEATURE_LEN + 1).unwrap_or("").trim();
        if label.is_empty() {
            continue;
        }
        let mut features = [0.0; FEATURE_LEN];
        for (k, slot) in features.iter_mut().enumerate() {
            let cell = record.get(k + 1).unwrap_or("");
            *slot = cell
                .trim()
                .parse()
                .map_err(|_| invalid(format!("{}:{line}: bad number `{cell}`", path.display())))?;
        }
        let fallen = match label {
            "1" => true,
            "0" => false,
            other => return Err(invalid(format!("{}:{line}: bad label `{other}`", path.display()))),
        };
        out.push(SceneSample { features, fallen });
    }
    Ok(out)
}

fn train_vision(config: &RunConfig, args: &TrainVisionArgs) -> anyhow::Result<()> {
    let data = read_feature_csv(&args.features)?;
    let spec = match &args.classifier {
        Some(name) => {
            SceneClassifierSpec::by_name(name).ok_or_else(|| invalid(format!("unknown classifier `{name}`")))?
        }
        None => config.vision.classifier.clone(),
    };
    let model = SceneClassifier::fit(&spec, &data)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    model.save(&args.out)?;
    println!("{} samples: training accuracy {:.4}", data.len(), model.accuracy(&data)?);
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct VisionReport {
    frames: usize,
    detection: crate::vision::DetMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    scene_accuracy: Option<f64>,
}

fn eval_vision(args: &EvalVisionArgs) -> anyhow::Result<()> {
    require(&args.detections, "detection directory")?;
    require(&args.truths, "ground-truth directory")?;
    require(&args.class_map, "class map")?;
    let map = load_class_map(&args.class_map)?;
    let times = match &args.times {
        Some(p) => {
            require(p, "times file")?;
            load_times(p)?
        }
        None => BTreeMap::new(),
    };
    let frames: Vec<Frame> = pair_frames(load_detections(&args.detections, &map)?, load_truths(&args.truths, &map)?, &times);
    let detection = eval_detection_set(&frames)?;
    let scene_accuracy = match (&args.model, &args.labels) {
        (Some(model), Some(labels)) => {
            require(model, "scene classifier")?;
            let clf = SceneClassifier::load(model)?;
            let labels = load_labels(labels)?;
            let samples: Vec<SceneSample> = frames
                .iter()
                .filter_map(|f| {
                    labels.get(&f.name).map(|&fallen| SceneSample { features: extract_features(&f.detections), fallen })
                })
                .collect();
            Some(clf.accuracy(&samples)?)
        }
        _ => None,
    };
    emit_json(args.out.as_deref(), &VisionReport { frames: frames.len(), detection, scene_accuracy })
}

// ---- mission ---------------------------------------------------------------

fn load_artifacts(args: &SimulateArgs) -> anyhow::Result<Artifacts> {
    let mut a = Artifacts::default();
    if let Some(p) = &args.fall_model {
        require(p, "fall model")?;
        a.fall = Some(FallModelArtifact::load(p).with_context(|| p.display().to_string())?);
    }
    if let Some(p) = &args.loc_model {
        require(p, "localization model")?;
        a.loc = Some(LocModel::load(p).with_context(|| p.display().to_string())?);
    }
    if let Some(p) = &args.vision_model {
        require(p, "scene classifier")?;
        a.vision = Some(SceneClassifier::load(p).with_context(|| p.display().to_string())?);
    }
    Ok(a)
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> anyhow::Result<()> {
    let mut scenario = match (&args.scenario, args.preset) {
        (Some(path), _) => {
            require(path, "scenario")?;
            SimScenario::load(path).with_context(|| path.display().to_string())?
        }
        (None, Some(Preset::FalseTrigger)) => SimScenario::false_trigger(),
        (None, _) => SimScenario::fall(),
    };
    // the scenario file carries its own seed; only an explicit one overrides
    if let Some(seed) = cli.seed {
        scenario.seed = seed;
    }
    scenario.validate()?;
    if args.runs == 0 {
        return Err(invalid("--runs must be at least 1"));
    }
    let artifacts = load_artifacts(args)?;
    std::fs::create_dir_all(&args.out)?;
    write_json(&args.out.join("scenario.json"), &scenario)?;
    if args.runs == 1 {
        let outcome = run_scenario(&scenario, &artifacts)?;
        outcome.write(&args.out)?;
        let m = &outcome.metrics;
        println!(
            "{}: {} transitions, confirmed {}, false alarms {}, aborted {}",
            scenario.name,
            outcome.log.len(),
            m.confirmed,
            m.false_alarms,
            m.aborted
        );
    } else {
        let summary = monte_carlo(&scenario, &artifacts, args.runs, scenario.seed)?;
        write_json(&args.out.join("montecarlo.json"), &summary)?;
        println!(
            "{} runs: {} falls, {} missed (expected {:.4})",
            summary.scenarios, summary.falls, summary.missed, summary.expected_missed
        );
    }
    Ok(())
}

fn pct(r: &Reliability) -> String {
    format!("{:.5}%", r.accuracy_pct)
}

#[derive(Serialize)]
struct ReliabilitySection {
    rates: ReliabilityModel,
    /// Every stage must fail for the event to be lost.
    model: &'static str,
    failure: f64,
    failure_sci: String,
    accuracy: String,
    serial_alternative: AlternativeSection,
}

#[derive(Serialize)]
struct AlternativeSection {
    /// Any single stage failure loses the event.
    model: &'static str,
    failure: f64,
    accuracy: String,
}

fn reliability_section(rates: &ReliabilityModel) -> anyhow::Result<ReliabilitySection> {
    let product = combined_reliability(rates)?;
    let serial = serial_reliability(rates)?;
    Ok(ReliabilitySection {
        rates: *rates,
        model: "product of stage failure rates",
        failure: product.failure,
        failure_sci: format!("{:.5e}", product.failure),
        accuracy: pct(&product),
        serial_alternative: AlternativeSection {
            model: "serial success: 1 - prod(1 - rate)",
            failure: serial.failure,
            accuracy: pct(&serial),
        },
    })
}

fn report(config: &RunConfig, args: &ReportArgs) -> anyhow::Result<()> {
    let mut rates = config.reliability;
    rates.detect_fail = args.detect_fail.unwrap_or(rates.detect_fail);
    rates.nav_fail = args.nav_fail.unwrap_or(rates.nav_fail);
    rates.vision_fail = args.vision_fail.unwrap_or(rates.vision_fail);
    rates.validate().map_err(|e| invalid(e.to_string()))?;
    let reliability = reliability_section(&rates)?;

    let mut csv_rows: Vec<(String, String, String)> = vec![
        ("reliability".into(), "failure".into(), reliability.failure_sci.clone()),
        ("reliability".into(), "accuracy".into(), reliability.accuracy.clone()),
        ("reliability_serial".into(), "failure".into(), format!("{:.5e}", reliability.serial_alternative.failure)),
        ("reliability_serial".into(), "accuracy".into(), reliability.serial_alternative.accuracy.clone()),
    ];
    let mut flatten = |section: &str, value: &serde_json::Value| {
        if let serde_json::Value::Object(map) = value {
            for (k, v) in map {
                if v.is_number() || v.is_boolean() || v.is_string() {
                    let text = v.as_str().map_or_else(|| v.to_string(), str::to_string);
                    csv_rows.push((section.to_string(), k.clone(), text));
                }
            }
        }
    };

    let mut simulations = Vec::new();
    for (i, dir) in args.sim.iter().enumerate() {
        require(dir, "simulation directory")?;
        let mut entry = serde_json::Map::new();
        entry.insert("dir".into(), dir.display().to_string().into());
        for name in ["metrics.json", "montecarlo.json"] {
            let p = dir.join(name);
            if p.exists() {
                let v: serde_json::Value = read_json(&p)?;
                flatten(&format!("sim{i}"), &v);
                entry.insert(name.trim_end_matches(".json").into(), v);
            }
        }
        let scenario = dir.join("scenario.json");
        if scenario.exists() {
            let sc = SimScenario::load(&scenario)?;
            entry.insert("scenario".into(), sc.name.clone().into());
            entry.insert("scenario_rates".into(), serde_json::to_value(sc.errors)?);
        }
        simulations.push(serde_json::Value::Object(entry));
    }
    let mut fall = Vec::new();
    for (i, dir) in args.fall.iter().enumerate() {
        let v: serde_json::Value = read_json(&dir.join("metrics.json"))?;
        if let Some(m) = v.get("metrics") {
            flatten(&format!("fall{i}"), m);
        }
        fall.push(v);
    }
    let loc: Option<serde_json::Value> = args.loc.as_deref().map(read_json).transpose()?;
    if let Some(v) = &loc {
        flatten("localization", v);
    }
    let vision: Option<serde_json::Value> = args.vision.as_deref().map(read_json).transpose()?;
    if let Some(v) = vision.as_ref().and_then(|v| v.get("detection")) {
        flatten("vision", v);
    }

    std::fs::create_dir_all(&args.out)?;
    let heatmaps = match (&args.table, &args.map) {
        (Some(table), Some(map)) => {
            require(map, "map")?;
            let table = read_table(table)?;
            let raster = OccupancyRaster::load(map)?;
            Some(write_heatmaps(&table, &raster, &args.out.join("heatmaps"))?)
        }
        _ => None,
    };
    let doc = serde_json::json!({
        "reliability": reliability,
        "simulations": simulations,
        "fall": fall,
        "localization": loc,
        "vision": vision,
        "heatmaps": heatmaps,
    });
    write_json(&args.out.join("report.json"), &doc)?;
    let mut w = csv::Writer::from_path(args.out.join("report.csv"))?;
    w.write_record(["section", "metric", "value"])?;
    for (s, k, v) in &csv_rows {
        w.write_record([s, k, v])?;
    }
    w.flush()?;
    println!(
        "combined accuracy {} (failure {}); serial alternative {}",
        reliability.accuracy, reliability.failure_sci, reliability.serial_alternative.accuracy
    );
    Ok(())
}

// ---- synthetic workspace ---------------------------------------------------

const SYNTH_CLASSES: [&str; 5] = ["person", "chair", "bed", "couch", "tv"];

fn box_line(id: usize, b: &BBox, conf: Option<f64>) -> String {
    let mut s = format!("{id} {:.6} {:.6} {:.6} {:.6}", b.cx, b.cy, b.w, b.h);
    if let Some(c) = conf {
        let _ = write!(s, " {c:.4}");
    }
    s
}

fn synth_vision(dir: &Path, frames: usize, seed: u64) -> anyhow::Result<()> {
    use rand::Rng;
    let (det_dir, gt_dir) = (dir.join("detections"), dir.join("truths"));
    std::fs::create_dir_all(&det_dir)?;
    std::fs::create_dir_all(&gt_dir)?;
    let classes: String = SYNTH_CLASSES.iter().enumerate().map(|(i, c)| format!("{i} {c}\n")).collect();
    std::fs::write(dir.join("classes.txt"), classes)?;
    let mut labels = String::from("frame,fallen\n");
    let mut times = String::new();
    for i in 0..frames {
        let fallen = i % 2 == 1;
        let name = format!("frame_{i:04}");
        let scene = synth_scene(fallen, seed, i as u64);
        let mut rng = seeds::stream_rng(seed, "cli.synth.vision", i as u64);
        let (mut det, mut gt) = (String::new(), String::new());
        for d in &scene {
            let id = SYNTH_CLASSES.iter().position(|c| *c == d.class_name).expect("known class");
            gt.push_str(&box_line(id, &d.bbox, None));
            gt.push('\n');
            // the detector misses a few objects and localizes the rest loosely
            if rng.random_bool(0.9) {
                let j = |rng: &mut crate::seeds::StageRng, v: f64| (v + rng.random_range(-0.02..0.02)).clamp(0.0, 1.0);
                let b = BBox {
                    cx: j(&mut rng, d.bbox.cx),
                    cy: j(&mut rng, d.bbox.cy),
                    w: j(&mut rng, d.bbox.w).max(0.01),
                    h: j(&mut rng, d.bbox.h).max(0.01),
                };
                det.push_str(&box_line(id, &b, Some(d.confidence)));
                det.push('\n');
            }
        }
        if rng.random_bool(0.2) {
            let (cx, cy) = (rng.random_range(0.1..0.9), rng.random_range(0.1..0.9));
            let conf = rng.random_range(0.2..0.6);
            det.push_str(&box_line(rng.random_range(0..SYNTH_CLASSES.len()), &BBox { cx, cy, w: 0.1, h: 0.1 }, Some(conf)));
            det.push('\n');
        }
        std::fs::write(det_dir.join(format!("{name}.txt")), det)?;
        std::fs::write(gt_dir.join(format!("{name}.txt")), gt)?;
        let _ = writeln!(labels, "{name},{}", u8::from(fallen));
        let _ = writeln!(times, "{name},{:.4}", rng.random_range(0.015..0.045));
    }
    std::fs::write(dir.join("labels.csv"), labels)?;
    std::fs::write(dir.join("times.csv"), times)?;
    Ok(())
}

fn synth(config: &RunConfig, args: &SynthArgs) -> anyhow::Result<()> {
    let out = &args.out;
    std::fs::create_dir_all(out)?;
    let fall = SimScenario { seed: config.seed, ..SimScenario::fall() };
    let room = &fall.room;
    let map = synth_room(room.width_m, room.height_m, room.resolution)?;
    let map_path = out.join("map.pgm");
    map.save(&map_path)?;
    let anchors = default_anchors(5, room.width_m, room.height_m);
    let logs = synth_survey(&map, &anchors, &RadioModel::default(), args.waypoints, seeds::derive_seed(config.seed, "cli.synth.survey", 0))?;
    logs.save(&out.join("logs"))?;
    synth_vision(&out.join("vision"), args.frames, seeds::derive_seed(config.seed, "cli.synth.vision", 0))?;
    let scenarios = out.join("scenarios");
    std::fs::create_dir_all(&scenarios)?;
    let false_trigger = SimScenario { seed: config.seed, ..SimScenario::false_trigger() };
    let with_map = |s: SimScenario| SimScenario { map: Some(map_path.clone()), ..s };
    write_json(&scenarios.join("fall.json"), &with_map(fall.clone()))?;
    write_json(&scenarios.join("false_trigger.json"), &with_map(false_trigger))?;
    write_json(
        &scenarios.join("fall_paper_rates.json"),
        &with_map(SimScenario { name: "fall_paper_rates".into(), errors: ReliabilityModel::default(), ..fall }),
    )?;
    println!("synthetic workspace -> {}", out.display());
    Ok(())
}
