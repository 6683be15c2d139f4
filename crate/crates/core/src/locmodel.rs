//! RSSI-vector → (x, y) regressors: feature engineering, [−1, 1] scaling,
//! kNN / CART / forest / dense-net models and distance metrics.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fingerprint::{FingerprintTable, Mac};
use crate::nn::{self, Example, Mlp, NnError, TrainConfig};
use crate::seeds;
use crate::tree::{Criterion, Forest, ForestConfig, Tree, TreeConfig};

pub const LOC_ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LocError {
    #[error("empty RSSI vector")]
    EmptyVector,
    #[error("empty training set")]
    EmptyTrainSet,
    #[error("model is not fitted")]
    NotFitted,
    #[error("length mismatch: {0} predictions vs {1} truths")]
    LengthMismatch(usize, usize),
    #[error("nothing to evaluate")]
    Empty,
    #[error("expected {expected} features, got {got}")]
    FeatureWidth { expected: usize, got: usize },
    #[error("unsupported localization artifact version {0}")]
    ArtifactVersion(u32),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    Raw,
    #[default]
    Engineered,
}

impl std::str::FromStr for FeatureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(Self::Raw),
            "engineered" => Ok(Self::Engineered),
            other => Err(format!("unknown feature mode `{other}` (raw|engineered)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub rssi: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Anchors strictly above the floor.
    pub anchors_visible: usize,
}

impl FeatureRow {
    pub fn to_vec(&self, mode: FeatureMode) -> Vec<f64> {
        let mut v = self.rssi.clone();
        if mode == FeatureMode::Engineered {
            v.extend([self.mean, self.std, self.anchors_visible as f64]);
        }
        v
    }
}

pub fn engineer_features(rssi: &[f64], floor_dbm: f64) -> Result<FeatureRow, LocError> {
    if rssi.is_empty() {
        return Err(LocError::EmptyVector);
    }
    let n = rssi.len() as f64;
    let mean = rssi.iter().sum::<f64>() / n;
    let var = rssi.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(FeatureRow {
        rssi: rssi.to_vec(),
        mean,
        std: var.sqrt(),
        anchors_visible: rssi.iter().filter(|&&v| v > floor_dbm).count(),
    })
}

/// Per-feature min-max map onto [−1, 1], fitted once and frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self, LocError> {
        let first = rows.first().ok_or(LocError::EmptyTrainSet)?;
        let mut min = first.clone();
        let mut max = first.clone();
        for row in rows {
            if row.len() != min.len() {
                return Err(LocError::FeatureWidth { expected: min.len(), got: row.len() });
            }
            for (k, v) in row.iter().enumerate() {
                min[k] = min[k].min(*v);
                max[k] = max[k].max(*v);
            }
        }
        Ok(Self { min, max })
    }

    /// Constant features map to 0.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>, LocError> {
        if x.len() != self.min.len() {
            return Err(LocError::FeatureWidth { expected: self.min.len(), got: x.len() });
        }
        Ok(x.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(v, (lo, hi))| {
                let span = hi - lo;
                if span > 0.0 {
                    2.0 * (v - lo) / span - 1.0
                } else {
                    0.0
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegressorSpec {
    Knn {
        k: usize,
    },
    DecisionTree {
        max_depth: usize,
        min_leaf: usize,
    },
    RandomForest {
        trees: usize,
        bootstrap_ratio: f64,
        max_depth: usize,
        min_leaf: usize,
    },
    Mlp {
        hidden: Vec<usize>,
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
    },
}

impl RegressorSpec {
    pub fn knn() -> Self {
        Self::Knn { k: 5 }
    }

    pub fn decision_tree() -> Self {
        Self::DecisionTree { max_depth: 12, min_leaf: 2 }
    }

    pub fn random_forest() -> Self {
        Self::RandomForest {
            trees: 50,
            bootstrap_ratio: 1.0,
            max_depth: 12,
            min_leaf: 2,
        }
    }

    pub fn mlp() -> Self {
        Self::Mlp {
            hidden: vec![32, 16],
            epochs: 200,
            learning_rate: 0.01,
            batch_size: 32,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Knn { .. } => "knn",
            Self::DecisionTree { .. } => "decision_tree",
            Self::RandomForest { .. } => "random_forest",
            Self::Mlp { .. } => "mlp",
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "knn" => Some(Self::knn()),
            "decision_tree" | "tree" => Some(Self::decision_tree()),
            "random_forest" | "forest" => Some(Self::random_forest()),
            "mlp" => Some(Self::mlp()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fitted {
    Knn { k: usize, x: Vec<Vec<f64>>, y: Vec<[f64; 2]> },
    Tree(Tree),
    Forest(Forest),
    /// The net predicts targets mapped to [−1, 1] by `target_scaler`.
    Mlp { net: Mlp, target_scaler: FeatureScaler },
}

/// A regressor over already-scaled feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regressor {
    pub spec: RegressorSpec,
    pub fitted: Option<Fitted>,
}

impl Regressor {
    pub fn new(spec: RegressorSpec) -> Self {
        Self { spec, fitted: None }
    }

    pub fn fit(&mut self, x: &[Vec<f64>], y: &[[f64; 2]], seed: u64) -> Result<(), LocError> {
        if x.is_empty() {
            return Err(LocError::EmptyTrainSet);
        }
        if x.len() != y.len() {
            return Err(LocError::LengthMismatch(x.len(), y.len()));
        }
        let targets: Vec<Vec<f64>> = y.iter().map(|t| t.to_vec()).collect();
        self.fitted = Some(match &self.spec {
            RegressorSpec::Knn { k } => Fitted::Knn {
                k: (*k).clamp(1, x.len()),
                x: x.to_vec(),
                y: y.to_vec(),
            },
            RegressorSpec::DecisionTree { max_depth, min_leaf } => {
                let config = TreeConfig {
                    max_depth: *max_depth,
                    min_leaf: *min_leaf,
                    max_features: None,
                };
                let idx: Vec<usize> = (0..x.len()).collect();
                let mut rng = seeds::stream_rng(seed, "locmodel.tree", 0);
                Fitted::Tree(Tree::fit(x, &targets, &idx, Criterion::Variance, &config, &mut rng))
            }
            RegressorSpec::RandomForest { trees, bootstrap_ratio, max_depth, min_leaf } => {
                let width = x[0].len();
                let config = ForestConfig {
                    trees: *trees,
                    bootstrap_ratio: *bootstrap_ratio,
                    tree: TreeConfig {
                        max_depth: *max_depth,
                        min_leaf: *min_leaf,
                        max_features: Some(((width as f64).sqrt().round() as usize).max(1)),
                    },
                    seed: seeds::derive_seed(seed, "locmodel.forest", 0),
                };
                Fitted::Forest(Forest::fit(x, &targets, Criterion::Variance, &config))
            }
            RegressorSpec::Mlp { hidden, epochs, learning_rate, batch_size } => {
                let target_scaler = FeatureScaler::fit(&targets)?;
                let data: Vec<Example> = x
                    .iter()
                    .zip(&targets)
                    .map(|(input, t)| {
                        Ok(Example {
                            input: input.clone(),
                            target: target_scaler.transform(t)?,
                        })
                    })
                    .collect::<Result<_, LocError>>()?;
                let mut sizes = vec![x[0].len()];
                sizes.extend(hidden);
                sizes.push(2);
                let mut net = Mlp::new(sizes, seeds::derive_seed(seed, "locmodel.mlp", 0))?;
                let config = TrainConfig {
                    learning_rate: *learning_rate,
                    epochs: *epochs,
                    batch_size: *batch_size,
                    seed,
                };
                let mut rng = seeds::stream_rng(seed, "locmodel.mlp.shuffle", 0);
                for _ in 0..*epochs {
                    nn::train_epoch(&mut net, &data, &config, &mut rng)?;
                }
                Fitted::Mlp { net, target_scaler }
            }
        });
        Ok(())
    }

    pub fn predict(&self, x: &[f64]) -> Result<[f64; 2], LocError> {
        match self.fitted.as_ref().ok_or(LocError::NotFitted)? {
            Fitted::Knn { k, x: train, y } => {
                let mut dist: Vec<(f64, usize)> = train
                    .iter()
                    .enumerate()
                    .map(|(i, row)| (row.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), i))
                    .collect();
                // stable: equal distances keep the lower training index first
                dist.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut out = [0.0; 2];
                for &(_, i) in &dist[..*k] {
                    out[0] += y[i][0];
                    out[1] += y[i][1];
                }
                Ok([out[0] / *k as f64, out[1] / *k as f64])
            }
            Fitted::Tree(tree) => {
                let v = tree.predict(x);
                Ok([v[0], v[1]])
            }
            Fitted::Forest(forest) => {
                let v = forest.predict_mean(x);
                Ok([v[0], v[1]])
            }
            Fitted::Mlp { net, target_scaler } => {
                let v = net.forward(x)?;
                let unscale = |k: usize| {
                    let (lo, hi) = (target_scaler.min[k], target_scaler.max[k]);
                    lo + (v[k] + 1.0) * 0.5 * (hi - lo)
                };
                Ok([unscale(0), unscale(1)])
            }
        }
    }
}

/// Per-coordinate mean absolute and squared errors, and mean Euclidean
/// distance error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocMetrics {
    pub mae: f64,
    pub mse: f64,
    pub mde: f64,
}

pub fn evaluate_loc(preds: &[[f64; 2]], truths: &[[f64; 2]]) -> Result<LocMetrics, LocError> {
    if preds.len() != truths.len() {
        return Err(LocError::LengthMismatch(preds.len(), truths.len()));
    }
    if preds.is_empty() {
        return Err(LocError::Empty);
    }
    let (mut abs, mut sq, mut dist) = (0.0, 0.0, 0.0);
    for (p, t) in preds.iter().zip(truths) {
        let (dx, dy) = (p[0] - t[0], p[1] - t[1]);
        abs += dx.abs() + dy.abs();
        sq += dx * dx + dy * dy;
        dist += dx.hypot(dy);
    }
    let n = preds.len() as f64;
    Ok(LocMetrics {
        mae: abs / (2.0 * n),
        mse: sq / (2.0 * n),
        mde: dist / n,
    })
}

/// One position-tagged RSSI vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocSample {
    pub rssi: Vec<f64>,
    pub target: [f64; 2],
}

/// Table rows as samples; missing cells become `floor_dbm`.
pub fn samples_from_table(table: &FingerprintTable, floor_dbm: f64) -> Vec<LocSample> {
    table
        .rows
        .iter()
        .map(|r| LocSample {
            rssi: r.rssi.iter().map(|c| c.unwrap_or(floor_dbm)).collect(),
            target: [r.x, r.y],
        })
        .collect()
}

/// Feature pipeline plus fitted regressor; the persisted localization model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocModel {
    pub version: u32,
    pub anchors: Vec<Mac>,
    pub mode: FeatureMode,
    pub floor_dbm: f64,
    pub scaler: FeatureScaler,
    pub regressor: Regressor,
}

impl LocModel {
    pub fn fit(
        anchors: Vec<Mac>,
        samples: &[LocSample],
        mode: FeatureMode,
        floor_dbm: f64,
        spec: RegressorSpec,
        seed: u64,
    ) -> Result<Self, LocError> {
        if samples.is_empty() {
            return Err(LocError::EmptyTrainSet);
        }
        let raw = samples
            .iter()
            .map(|s| Ok(engineer_features(&s.rssi, floor_dbm)?.to_vec(mode)))
            .collect::<Result<Vec<_>, LocError>>()?;
        let scaler = FeatureScaler::fit(&raw)?;
        let x = raw.iter().map(|r| scaler.transform(r)).collect::<Result<Vec<_>, _>>()?;
        let y: Vec<[f64; 2]> = samples.iter().map(|s| s.target).collect();
        let mut regressor = Regressor::new(spec);
        regressor.fit(&x, &y, seed)?;
        Ok(Self {
            version: LOC_ARTIFACT_VERSION,
            anchors,
            mode,
            floor_dbm,
            scaler,
            regressor,
        })
    }

    pub fn predict(&self, rssi: &[f64]) -> Result<[f64; 2], LocError> {
        let features = engineer_features(rssi, self.floor_dbm)?.to_vec(self.mode);
        self.regressor.predict(&self.scaler.transform(&features)?)
    }

    pub fn evaluate(&self, samples: &[LocSample]) -> Result<LocMetrics, LocError> {
        let preds = samples
            .iter()
            .map(|s| self.predict(&s.rssi))
            .collect::<Result<Vec<_>, _>>()?;
        let truths: Vec<[f64; 2]> = samples.iter().map(|s| s.target).collect();
        evaluate_loc(&preds, &truths)
    }

    pub fn save(&self, path: &Path) -> Result<(), LocError> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LocError> {
        let model: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        if model.version != LOC_ARTIFACT_VERSION {
            return Err(LocError::ArtifactVersion(model.version));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_examples() {
        let f = engineer_features(&[-100.0, -100.0, -100.0], -100.0).unwrap();
        assert_eq!((f.mean, f.std, f.anchors_visible), (-100.0, 0.0, 0));
        let f = engineer_features(&[-60.0, -80.0], -100.0).unwrap();
        assert_eq!((f.mean, f.std, f.anchors_visible), (-70.0, 10.0, 2));
        let f = engineer_features(&[-50.0, -100.0], -100.0).unwrap();
        assert_eq!((f.mean, f.std, f.anchors_visible), (-75.0, 25.0, 1));
        assert_eq!(f.to_vec(FeatureMode::Raw), vec![-50.0, -100.0]);
        assert_eq!(f.to_vec(FeatureMode::Engineered).len(), 5);
        assert!(matches!(engineer_features(&[], -100.0), Err(LocError::EmptyVector)));
    }

    #[test]
    fn metric_example() {
        let m = evaluate_loc(&[[0.0, 0.0]], &[[3.0, 4.0]]).unwrap();
        assert_eq!((m.mde, m.mae, m.mse), (5.0, 3.5, 12.5));
        let zero = evaluate_loc(&[[1.0, 2.0]], &[[1.0, 2.0]]).unwrap();
        assert_eq!((zero.mde, zero.mae, zero.mse), (0.0, 0.0, 0.0));
        assert!(matches!(evaluate_loc(&[], &[]), Err(LocError::Empty)));
        assert!(matches!(evaluate_loc(&[[0.0; 2]], &[]), Err(LocError::LengthMismatch(1, 0))));
    }

    #[test]
    fn scaler_maps_to_unit_interval() {
        let s = FeatureScaler::fit(&[vec![0.0, 5.0], vec![10.0, 5.0]]).unwrap();
        assert_eq!(s.transform(&[5.0, 5.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(s.transform(&[10.0, 5.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(s.transform(&[0.0, 5.0]).unwrap(), vec![-1.0, 0.0]);
    }

    #[test]
    fn unfitted_regressor() {
        assert!(matches!(
            Regressor::new(RegressorSpec::knn()).predict(&[0.0]),
            Err(LocError::NotFitted)
        ));
    }
}
