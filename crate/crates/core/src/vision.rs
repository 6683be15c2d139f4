//! Visual confirmation stage over detection records: IoU and AP@50, the
//! 13-value scene descriptor and fallen / not-fallen classifiers.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeds::{self, StageRng};
use crate::tree::{Criterion, Forest, ForestConfig, TreeConfig};

pub const IOU_THRESHOLD: f64 = 0.5;
pub const FEATURE_LEN: usize = 13;
/// Support distance reported when a frame has no person or no support object.
pub const NO_SUPPORT_DISTANCE: f64 = 2.0;
pub const SUPPORT_CLASSES: [&str; 3] = ["chair", "bed", "couch"];
pub const RELEVANT_CLASSES: [&str; 4] = ["person", "chair", "bed", "couch"];
pub const FALLEN: &str = "fallen";
pub const NOT_FALLEN: &str = "not_fallen";

#[derive(Debug, Error)]
pub enum VisionError {
    #[error("invalid box {0:?}")]
    InvalidBox(BBox),
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
    #[error("training set has a single class")]
    SingleClassDataset,
    #[error("empty training set")]
    EmptyTrainSet,
    #[error("nothing to evaluate")]
    Empty,
    #[error("expected {FEATURE_LEN} features, got {0}")]
    FeatureWidth(usize),
    #[error("{file}:{line}: {message}")]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Normalized centre-format box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, VisionError> {
        let b = Self { cx, cy, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), VisionError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let size = |v: f64| v > 0.0 && v <= 1.0;
        if unit(self.cx) && unit(self.cy) && size(self.w) && size(self.h) {
            Ok(())
        } else {
            Err(VisionError::InvalidBox(*self))
        }
    }

    /// (x0, y0, x1, y1)
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_name: String,
    pub bbox: BBox,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallen: Option<bool>,
}

impl Detection {
    pub fn new(class_name: &str, bbox: BBox, confidence: f64) -> Self {
        Self {
            class_name: class_name.to_string(),
            bbox,
            confidence,
            fallen: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub class_name: String,
    pub bbox: BBox,
}

/// Scored boxes and truths of one class in one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameBoxes {
    pub detections: Vec<(BBox, f64)>,
    pub truths: Vec<BBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub ap: f64,
    pub tp: usize,
    pub fp: usize,
    pub truths: usize,
    /// No truths: AP is reported as 0.
    pub no_ground_truth: bool,
}

/// Confidence-ranked detections, each marked true/false positive. Each
/// detection takes the unmatched truth of its frame with the highest IoU
/// (lowest index on ties), if that IoU is at least 0.5.
fn rank_and_match(frames: &[FrameBoxes]) -> Vec<bool> {
    let mut ranked: Vec<(f64, usize, usize)> = frames
        .iter()
        .enumerate()
        .flat_map(|(f, fb)| fb.detections.iter().enumerate().map(move |(d, (_, c))| (*c, f, d)))
        .collect();
    // stable: equal confidences keep frame/detection order
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut taken: Vec<Vec<bool>> = frames.iter().map(|f| vec![false; f.truths.len()]).collect();
    ranked
        .iter()
        .map(|&(_, f, d)| {
            let det = &frames[f].detections[d].0;
            let mut best: Option<(f64, usize)> = None;
            for (t, truth) in frames[f].truths.iter().enumerate() {
                if taken[f][t] {
                    continue;
                }
                let o = iou(det, truth);
                if o >= IOU_THRESHOLD && best.is_none_or(|(bo, _)| o > bo) {
                    best = Some((o, t));
                }
            }
            match best {
                Some((_, t)) => {
                    taken[f][t] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// All-points interpolated area under the precision/recall curve at IoU 0.5.
pub fn ap50_frames(frames: &[FrameBoxes]) -> ApResult {
    let truths: usize = frames.iter().map(|f| f.truths.len()).sum();
    let hits = rank_and_match(frames);
    let tp_total = hits.iter().filter(|h| **h).count();
    let fp = hits.len() - tp_total;
    if truths == 0 {
        return ApResult { ap: 0.0, tp: 0, fp, truths, no_ground_truth: true };
    }
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (k, hit) in hits.iter().enumerate() {
        tp += usize::from(*hit);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    // precision envelope, scanning from the lowest-ranked detection
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    // every hit raises recall by 1/truths
    let sum: f64 = hits.iter().zip(&precision).filter(|(h, _)| **h).map(|(_, p)| *p).sum();
    ApResult {
        ap: sum / truths as f64,
        tp: tp_total,
        fp,
        truths,
        no_ground_truth: false,
    }
}

pub fn ap50(detections: &[(BBox, f64)], truths: &[BBox]) -> ApResult {
    ap50_frames(&[FrameBoxes {
        detections: detections.to_vec(),
        truths: truths.to_vec(),
    }])
}

/// One evaluated image: detections, truths and the measured inference time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Frame {
    pub name: String,
    pub detections: Vec<Detection>,
    pub truths: Vec<GroundTruthBox>,
    pub inference_s: Option<f64>,
}

fn split_by_class(frames: &[Frame]) -> BTreeMap<String, Vec<FrameBoxes>> {
    let classes: BTreeSet<&str> = frames
        .iter()
        .flat_map(|f| {
            f.truths
                .iter()
                .map(|t| t.class_name.as_str())
                .chain(f.detections.iter().map(|d| d.class_name.as_str()))
        })
        .collect();
    classes
        .into_iter()
        .map(|c| {
            let per_frame = frames
                .iter()
                .map(|f| FrameBoxes {
                    detections: f
                        .detections
                        .iter()
                        .filter(|d| d.class_name == c)
                        .map(|d| (d.bbox, d.confidence))
                        .collect(),
                    truths: f.truths.iter().filter(|t| t.class_name == c).map(|t| t.bbox).collect(),
                })
                .collect();
            (c.to_string(), per_frame)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetMetrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Mean AP over classes that have at least one truth.
    pub map50: f64,
    pub per_class_ap: BTreeMap<String, f64>,
    pub mean_inference_s: Option<f64>,
    pub interpolation: String,
}

pub fn eval_detection_set(frames: &[Frame]) -> Result<DetMetrics, VisionError> {
    if frames.is_empty() {
        return Err(VisionError::Empty);
    }
    let (mut tp, mut fp, mut truths) = (0, 0, 0);
    let mut per_class_ap = BTreeMap::new();
    for (class, boxes) in split_by_class(frames) {
        let r = ap50_frames(&boxes);
        tp += r.tp;
        fp += r.fp;
        truths += r.truths;
        if !r.no_ground_truth {
            per_class_ap.insert(class, r.ap);
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, truths);
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    let map50 = if per_class_ap.is_empty() {
        0.0
    } else {
        per_class_ap.values().sum::<f64>() / per_class_ap.len() as f64
    };
    let times: Vec<f64> = frames.iter().filter_map(|f| f.inference_s).collect();
    Ok(DetMetrics {
        tp,
        fp,
        fn_: truths - tp,
        precision,
        recall,
        f1,
        map50,
        per_class_ap,
        mean_inference_s: (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64),
        interpolation: "all-points".into(),
    })
}

/// Fixed-order 13-value scene descriptor; see [`extract_features`].
pub type SceneFeatures = [f64; FEATURE_LEN];

pub const FEATURE_NAMES: [&str; FEATURE_LEN] = [
    "count_person",
    "count_chair",
    "count_bed",
    "count_couch",
    "count_relevant",
    "avg_width",
    "avg_height",
    "person_y_mean",
    "person_y_std",
    "person_y_max",
    "person_y_min",
    "person_aspect",
    "min_support_distance",
];

/// Counts, average relevant box size, person centre-height statistics,
/// person aspect ratio and nearest person-to-support centre distance.
/// Detections are put in a canonical order first, so the output does not
/// depend on input order.
pub fn extract_features(detections: &[Detection]) -> SceneFeatures {
    let mut relevant: Vec<&Detection> = detections
        .iter()
        .filter(|d| RELEVANT_CLASSES.contains(&d.class_name.as_str()))
        .collect();
    relevant.sort_by(|a, b| {
        a.class_name
            .cmp(&b.class_name)
            .then(a.bbox.cx.total_cmp(&b.bbox.cx))
            .then(a.bbox.cy.total_cmp(&b.bbox.cy))
            .then(a.bbox.w.total_cmp(&b.bbox.w))
            .then(a.bbox.h.total_cmp(&b.bbox.h))
    });
    let mut f = [0.0; FEATURE_LEN];
    for (k, class) in RELEVANT_CLASSES.iter().enumerate() {
        f[k] = relevant.iter().filter(|d| d.class_name == *class).count() as f64;
    }
    let n = relevant.len() as f64;
    f[4] = n;
    if n > 0.0 {
        f[5] = relevant.iter().map(|d| d.bbox.w).sum::<f64>() / n;
        f[6] = relevant.iter().map(|d| d.bbox.h).sum::<f64>() / n;
    }
    let persons: Vec<&BBox> = relevant.iter().filter(|d| d.class_name == "person").map(|d| &d.bbox).collect();
    f[12] = NO_SUPPORT_DISTANCE;
    if !persons.is_empty() {
        let m = persons.len() as f64;
        let mean = persons.iter().map(|b| b.cy).sum::<f64>() / m;
        f[7] = mean;
        f[8] = (persons.iter().map(|b| (b.cy - mean).powi(2)).sum::<f64>() / m).sqrt();
        f[9] = persons.iter().map(|b| b.cy).fold(f64::NEG_INFINITY, f64::max);
        f[10] = persons.iter().map(|b| b.cy).fold(f64::INFINITY, f64::min);
        f[11] = persons.iter().map(|b| b.w / b.h).sum::<f64>() / m;
        for p in &persons {
            for s in relevant.iter().filter(|d| SUPPORT_CLASSES.contains(&d.class_name.as_str())) {
                f[12] = f[12].min((p.cx - s.bbox.cx).hypot(p.cy - s.bbox.cy));
            }
        }
    }
    f
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSample {
    pub features: SceneFeatures,
    pub fallen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SceneClassifierSpec {
    Logistic { learning_rate: f64, epochs: usize },
    RandomForest { trees: usize, max_depth: usize, min_leaf: usize, seed: u64 },
}

impl SceneClassifierSpec {
    pub fn logistic() -> Self {
        Self::Logistic { learning_rate: 0.5, epochs: 1000 }
    }

    /// An odd tree count rules out vote ties.
    pub fn random_forest() -> Self {
        Self::RandomForest { trees: 51, max_depth: 12, min_leaf: 1, seed: 1 }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "logistic" => Some(Self::logistic()),
            "random_forest" | "forest" => Some(Self::random_forest()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneClassifier {
    /// Sigmoid over standardized features.
    Logistic {
        mean: Vec<f64>,
        std: Vec<f64>,
        weights: Vec<f64>,
        bias: f64,
    },
    RandomForest(Forest),
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl SceneClassifier {
    pub fn fit(spec: &SceneClassifierSpec, data: &[SceneSample]) -> Result<Self, VisionError> {
        if data.is_empty() {
            return Err(VisionError::EmptyTrainSet);
        }
        if data.iter().all(|s| s.fallen == data[0].fallen) {
            return Err(VisionError::SingleClassDataset);
        }
        let n = data.len() as f64;
        Ok(match spec {
            SceneClassifierSpec::Logistic { learning_rate, epochs } => {
                let mut mean = vec![0.0; FEATURE_LEN];
                let mut std = vec![0.0; FEATURE_LEN];
                for k in 0..FEATURE_LEN {
                    mean[k] = data.iter().map(|s| s.features[k]).sum::<f64>() / n;
                    let var = data.iter().map(|s| (s.features[k] - mean[k]).powi(2)).sum::<f64>() / n;
                    std[k] = if var > 0.0 { var.sqrt() } else { 1.0 };
                }
                let xs: Vec<Vec<f64>> = data
                    .iter()
                    .map(|s| (0..FEATURE_LEN).map(|k| (s.features[k] - mean[k]) / std[k]).collect())
                    .collect();
                let mut weights = vec![0.0; FEATURE_LEN];
                let mut bias = 0.0;
                for _ in 0..*epochs {
                    let mut gw = vec![0.0; FEATURE_LEN];
                    let mut gb = 0.0;
                    for (x, s) in xs.iter().zip(data) {
                        let z = bias + x.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>();
                        let err = sigmoid(z) - f64::from(u8::from(s.fallen));
                        gb += err;
                        for (g, v) in gw.iter_mut().zip(x) {
                            *g += err * v;
                        }
                    }
                    bias -= learning_rate * gb / n;
                    for (w, g) in weights.iter_mut().zip(&gw) {
                        *w -= learning_rate * g / n;
                    }
                }
                Self::Logistic { mean, std, weights, bias }
            }
            SceneClassifierSpec::RandomForest { trees, max_depth, min_leaf, seed } => {
                let x: Vec<Vec<f64>> = data.iter().map(|s| s.features.to_vec()).collect();
                let y: Vec<Vec<f64>> = data.iter().map(|s| vec![f64::from(u8::from(s.fallen))]).collect();
                let config = ForestConfig {
                    trees: *trees,
                    bootstrap_ratio: 1.0,
                    tree: TreeConfig {
                        max_depth: *max_depth,
                        min_leaf: *min_leaf,
                        max_features: Some(((FEATURE_LEN as f64).sqrt().round() as usize).max(1)),
                    },
                    seed: seeds::derive_seed(*seed, "vision.forest", 0),
                };
                Self::RandomForest(Forest::fit(&x, &y, Criterion::Gini { classes: 2 }, &config))
            }
        })
    }

    /// Probability of fallen (vote share for the forest).
    pub fn predict_proba(&self, features: &SceneFeatures) -> f64 {
        match self {
            Self::Logistic { mean, std, weights, bias } => {
                let z = bias
                    + (0..FEATURE_LEN)
                        .map(|k| weights[k] * (features[k] - mean[k]) / std[k])
                        .sum::<f64>();
                sigmoid(z)
            }
            Self::RandomForest(forest) => {
                let votes = forest.votes(features);
                votes[1] as f64 / forest.trees.len() as f64
            }
        }
    }

    pub fn predict(&self, features: &SceneFeatures) -> bool {
        match self {
            Self::Logistic { .. } => self.predict_proba(features) >= 0.5,
            Self::RandomForest(forest) => forest.predict_class(features) == 1,
        }
    }

    pub fn accuracy(&self, data: &[SceneSample]) -> Result<f64, VisionError> {
        if data.is_empty() {
            return Err(VisionError::Empty);
        }
        let hits = data.iter().filter(|s| self.predict(&s.features) == s.fallen).count();
        Ok(hits as f64 / data.len() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<(), VisionError> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, VisionError> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Class-map file: one `id name` pair per line.
pub fn load_class_map(path: &Path) -> Result<BTreeMap<i64, String>, VisionError> {
    let text = std::fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| VisionError::Parse { file: path.into(), line: i + 1, message };
        let (id, name) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| parse_err(format!("expected `id name`, got `{line}`")))?;
        let id: i64 = id.parse().map_err(|_| parse_err(format!("bad class id `{id}`")))?;
        map.insert(id, name.trim().to_string());
    }
    Ok(map)
}

fn class_name(map: &BTreeMap<i64, String>, id: i64) -> Option<String> {
    // fall datasets label "no fall" frames with -1
    map.get(&id).cloned().or_else(|| (id == -1).then(|| NOT_FALLEN.to_string()))
}

/// Parse one YOLO-style record file: `class_id cx cy w h [conf]`.
fn parse_record_file(
    path: &Path,
    map: &BTreeMap<i64, String>,
    with_conf: bool,
) -> Result<Vec<(String, BBox, f64)>, VisionError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| VisionError::Parse { file: path.into(), line: i + 1, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let want = if with_conf { 6 } else { 5 };
        if fields.len() != want {
            return Err(parse_err(format!("expected {want} fields, got {}", fields.len())));
        }
        let id: i64 = fields[0].parse().map_err(|_| parse_err(format!("bad class id `{}`", fields[0])))?;
        let nums = fields[1..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| parse_err(format!("bad number `{s}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        let name = class_name(map, id).ok_or_else(|| parse_err(format!("class id {id} not in class map")))?;
        let bbox = BBox::new(nums[0], nums[1], nums[2], nums[3]).map_err(|e| parse_err(e.to_string()))?;
        let conf = if with_conf { nums[4] } else { 1.0 };
        if !(0.0..=1.0).contains(&conf) {
            return Err(parse_err(VisionError::InvalidConfidence(conf).to_string()));
        }
        out.push((name, bbox, conf));
    }
    Ok(out)
}

fn txt_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>, VisionError> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                files.insert(stem.to_string(), path);
            }
        }
    }
    Ok(files)
}

/// Detection files by frame name.
pub fn load_detections(dir: &Path, map: &BTreeMap<i64, String>) -> Result<BTreeMap<String, Vec<Detection>>, VisionError> {
    txt_files(dir)?
        .into_iter()
        .map(|(stem, path)| {
            let dets = parse_record_file(&path, map, true)?
                .into_iter()
                .map(|(name, bbox, conf)| Detection::new(&name, bbox, conf))
                .collect();
            Ok((stem, dets))
        })
        .collect()
}

/// Ground-truth files by frame name.
pub fn load_truths(dir: &Path, map: &BTreeMap<i64, String>) -> Result<BTreeMap<String, Vec<GroundTruthBox>>, VisionError> {
    txt_files(dir)?
        .into_iter()
        .map(|(stem, path)| {
            let truths = parse_record_file(&path, map, false)?
                .into_iter()
                .map(|(class_name, bbox, _)| GroundTruthBox { class_name, bbox })
                .collect();
            Ok((stem, truths))
        })
        .collect()
}

/// Optional `times.csv` (`frame,seconds`) next to the detections.
pub fn load_times(path: &Path) -> Result<BTreeMap<String, f64>, VisionError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| VisionError::Parse { file: path.into(), line: 0, message: e.to_string() })?;
    let mut out = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let parse_err = |message: String| VisionError::Parse { file: path.into(), line: i + 1, message };
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        let seconds: f64 = record
            .get(1)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| parse_err("expected `frame,seconds`".into()))?;
        out.insert(record.get(0).unwrap_or_default().to_string(), seconds);
    }
    Ok(out)
}

/// Frames present in either directory; absent files are empty frames.
pub fn pair_frames(
    detections: BTreeMap<String, Vec<Detection>>,
    mut truths: BTreeMap<String, Vec<GroundTruthBox>>,
    times: &BTreeMap<String, f64>,
) -> Vec<Frame> {
    let mut frames: BTreeMap<String, Frame> = BTreeMap::new();
    for (name, dets) in detections {
        let truths = truths.remove(&name).unwrap_or_default();
        frames.insert(name.clone(), Frame { inference_s: times.get(&name).copied(), name, detections: dets, truths });
    }
    for (name, t) in truths {
        frames.insert(name.clone(), Frame { inference_s: times.get(&name).copied(), name, detections: vec![], truths: t });
    }
    frames.into_values().collect()
}

fn clamp_box(rng: &mut StageRng, cx: f64, cy: f64, w: f64, h: f64) -> BBox {
    let jitter = |rng: &mut StageRng, v: f64, s: f64| v + rng.random_range(-s..=s);
    let w = jitter(rng, w, 0.03).clamp(0.02, 1.0);
    let h = jitter(rng, h, 0.03).clamp(0.02, 1.0);
    BBox {
        cx: jitter(rng, cx, 0.04).clamp(0.0, 1.0),
        cy: jitter(rng, cy, 0.04).clamp(0.0, 1.0),
        w,
        h,
    }
}

/// Detector output for a synthetic room. A fallen person is a wide, low box
/// (image y grows downward) away from furniture; an upright person is tall,
/// often beside a chair or couch.
pub fn synth_scene(fallen: bool, seed: u64, index: u64) -> Vec<Detection> {
    let mut rng = seeds::stream_rng(seed, "vision.scene", index);
    let mut dets = Vec::new();
    let person = if fallen {
        let cx = rng.random_range(0.25..0.75);
        clamp_box(&mut rng, cx, 0.82, 0.42, 0.16)
    } else {
        let cx = rng.random_range(0.2..0.8);
        clamp_box(&mut rng, cx, 0.5, 0.16, 0.55)
    };
    dets.push(Detection::new("person", person, rng.random_range(0.6..0.99)));
    for _ in 0..rng.random_range(1..=3) {
        let class = SUPPORT_CLASSES[rng.random_range(0..SUPPORT_CLASSES.len())];
        let (w, h) = match class {
            "chair" => (0.15, 0.3),
            "bed" => (0.45, 0.3),
            _ => (0.35, 0.25),
        };
        let bbox = if fallen {
            let (cx, cy) = (rng.random_range(0.1..0.9), rng.random_range(0.3..0.5));
            clamp_box(&mut rng, cx, cy, w, h)
        } else {
            let side = if rng.random_bool(0.5) { -0.18 } else { 0.18 };
            clamp_box(&mut rng, person.cx + side, 0.6, w, h)
        };
        dets.push(Detection::new(class, bbox, rng.random_range(0.4..0.95)));
    }
    if rng.random_bool(0.3) {
        let (cx, cy) = (rng.random_range(0.1..0.9), rng.random_range(0.1..0.9));
        let bbox = clamp_box(&mut rng, cx, cy, 0.1, 0.1);
        dets.push(Detection::new("tv", bbox, rng.random_range(0.3..0.9)));
    }
    dets
}

/// Balanced labelled scene features.
pub fn synth_scene_set(n: usize, seed: u64) -> Vec<SceneSample> {
    (0..n)
        .map(|i| {
            let fallen = i % 2 == 1;
            SceneSample {
                features: extract_features(&synth_scene(fallen, seed, i as u64)),
                fallen,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
        BBox { cx, cy, w, h }
    }

    #[test]
    fn iou_examples() {
        let a = b(0.3, 0.3, 0.2, 0.2);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(0.8, 0.8, 0.1, 0.1)), 0.0);
        // (0,0)-(2,2) and (1,1)-(3,3) scaled by 1/4
        let p = b(0.25, 0.25, 0.5, 0.5);
        let q = b(0.5, 0.5, 0.5, 0.5);
        assert!((iou(&p, &q) - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn ap_examples() {
        let t = b(0.5, 0.5, 0.2, 0.2);
        assert_eq!(ap50(&[(t, 0.9)], &[t]).ap, 1.0);
        // IoU 0.4 = 0.16w / (0.2w+0.2w-0.16w)... shifted box below threshold
        let shifted = b(0.5 + 0.2 * 3.0 / 7.0, 0.5, 0.2, 0.2);
        assert!((iou(&t, &shifted) - 0.4).abs() < 1e-12);
        assert_eq!(ap50(&[(shifted, 0.9)], &[t]).ap, 0.0);

        let t2 = b(0.2, 0.2, 0.1, 0.1);
        let miss = b(0.8, 0.8, 0.1, 0.1);
        let r = ap50(&[(t, 0.9), (miss, 0.8), (t2, 0.7)], &[t, t2]);
        assert!((r.ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!((r.tp, r.fp), (2, 1));

        let none = ap50(&[(t, 0.9)], &[]);
        assert!(none.no_ground_truth);
        assert_eq!(none.ap, 0.0);
    }

    #[test]
    fn feature_examples() {
        assert_eq!(
            extract_features(&[]),
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0]
        );
        let two = extract_features(&[
            Detection::new("person", b(0.3, 0.2, 0.1, 0.1), 0.9),
            Detection::new("person", b(0.6, 0.6, 0.1, 0.1), 0.9),
        ]);
        assert!((two[7] - 0.4).abs() < 1e-15);
        assert_eq!((two[9], two[10]), (0.6, 0.2));
        assert!((two[8] - 0.2).abs() < 1e-15);
        assert_eq!(two[12], NO_SUPPORT_DISTANCE);
    }

    #[test]
    fn single_class_rejected() {
        let data = vec![SceneSample { features: [0.0; FEATURE_LEN], fallen: true }; 3];
        assert!(matches!(
            SceneClassifier::fit(&SceneClassifierSpec::logistic(), &data),
            Err(VisionError::SingleClassDataset)
        ));
    }
}
