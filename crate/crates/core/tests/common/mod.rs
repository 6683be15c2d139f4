#![allow(dead_code)]

pub mod oracle;

use fallchain::fedsim::{run_experiment, synth_subject, ExperimentConfig, FallModelArtifact, TrainingMode};
use fallchain::locmodel::{FeatureMode, LocModel, RegressorSpec};
use fallchain::mission::{synth_loc_samples, Artifacts, RadioModel, SimScenario};
use fallchain::nn::{AutoencoderConfig, CellKind, TrainConfig};
use fallchain::preproc::PreprocConfig;
use fallchain::vision::{synth_scene_set, SceneClassifier, SceneClassifierSpec};

/// Small fall model trained on synthetic subjects.
pub fn fall_artifact(seed: u64) -> FallModelArtifact {
    let preproc = PreprocConfig::default();
    let subjects: Vec<_> = (0..10)
        .map(|i| synth_subject(&format!("S{i:02}"), seed, 40, 40, &preproc).unwrap())
        .collect();
    let config = ExperimentConfig {
        autoencoder: AutoencoderConfig { hidden: vec![16, 8], cell: CellKind::Gated },
        rounds: 10,
        head: TrainConfig { learning_rate: 0.1, epochs: 40, batch_size: 32, seed },
        seed,
        ..ExperimentConfig::default()
    };
    let result = run_experiment(&subjects, TrainingMode::Federated, &config).unwrap();
    assert!(result.metrics.acc >= 0.95, "{:?}", result.metrics);
    FallModelArtifact::new(preproc, result.norm_bounds, &result.classifier)
}

pub fn artifacts(seed: u64) -> Artifacts {
    let sc = SimScenario::default();
    let radio = RadioModel::default();
    let train = synth_loc_samples(&sc.anchors, sc.room.width_m, sc.room.height_m, 600, &radio, seed, "test.loc");
    let anchors = sc.anchors.iter().map(|a| a.mac).collect();
    let loc = LocModel::fit(anchors, &train, FeatureMode::Engineered, -100.0, RegressorSpec::knn(), seed).unwrap();
    let vision = SceneClassifier::fit(&SceneClassifierSpec::logistic(), &synth_scene_set(200, seed)).unwrap();
    Artifacts { fall: Some(fall_artifact(seed)), loc: Some(loc), vision: Some(vision) }
}
