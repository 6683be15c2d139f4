//! End-to-end simulation: grid planning, the navigation success model, the
//! synthetic radio, the fall-event state machine and reliability composition.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fedsim::{FallModelArtifact, FedError};
use crate::fingerprint::{Cell, DriftSample, FingerprintError, Mac, OccupancyRaster, PoseSample, RssiSample, SurveyLogs};
use crate::locmodel::{LocError, LocModel, LocSample};
use crate::nn::Classifier;
use crate::preproc::{self, Window};
use crate::seeds::{self, StageRng};
use crate::signal_io::{self, MotionProfile, TraceKind, SISFALL_RATE_HZ};
use crate::vision::{extract_features, synth_scene, SceneClassifier};

pub type GridCell = (usize, usize);

#[derive(Debug, Error)]
pub enum MissionError {
    #[error("no path between {0:?} and {1:?}")]
    NoPath(GridCell, GridCell),
    #[error("cell {0:?} is outside the map")]
    OutOfBounds(GridCell),
    #[error("cell {0:?} is not free")]
    BlockedEndpoint(GridCell),
    #[error("illegal transition: {stimulus} in state {state:?}")]
    IllegalTransition { state: PipelineState, stimulus: String },
    #[error("missing artifact: {0}")]
    MissingArtifact(&'static str),
    #[error("rate {0} outside [0, 1]")]
    InvalidRate(f64),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid event log: {0}")]
    InvalidLog(String),
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
    #[error(transparent)]
    Loc(#[from] LocError),
    #[error(transparent)]
    Fed(#[from] FedError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedPath {
    pub cells: Vec<GridCell>,
    pub cost: f64,
}

#[derive(PartialEq)]
struct Open {
    f: f64,
    order: u64,
    cell: GridCell,
}

impl Eq for Open {}

impl Ord for Open {
    // min-heap on f, then insertion order
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then(other.order.cmp(&self.order))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Moves from `cell`: 4 straight (cost 1) and 4 diagonal (cost √2). A
/// diagonal needs both adjoining straight cells free, so paths never clip a
/// wall corner.
pub fn neighbors(map: &OccupancyRaster, cell: GridCell) -> Vec<(GridCell, f64)> {
    let free = |x: i64, y: i64| {
        x >= 0 && y >= 0 && (x as usize) < map.width && (y as usize) < map.height && map.cell(x as usize, y as usize) == Cell::Free
    };
    let (x, y) = (cell.0 as i64, cell.1 as i64);
    let mut out = Vec::with_capacity(8);
    for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)] {
        let (nx, ny) = (x + dx, y + dy);
        if !free(nx, ny) {
            continue;
        }
        let diagonal = dx != 0 && dy != 0;
        if diagonal && !(free(x + dx, y) && free(x, y + dy)) {
            continue;
        }
        out.push(((nx as usize, ny as usize), if diagonal { std::f64::consts::SQRT_2 } else { 1.0 }));
    }
    out
}

fn check_endpoint(map: &OccupancyRaster, cell: GridCell) -> Result<(), MissionError> {
    if cell.0 >= map.width || cell.1 >= map.height {
        return Err(MissionError::OutOfBounds(cell));
    }
    if map.cell(cell.0, cell.1) != Cell::Free {
        return Err(MissionError::BlockedEndpoint(cell));
    }
    Ok(())
}

/// 8-connected A* with a Euclidean heuristic. Occupied and unknown cells
/// are impassable. Cost is in cells.
pub fn plan_path(map: &OccupancyRaster, start: GridCell, goal: GridCell) -> Result<PlannedPath, MissionError> {
    check_endpoint(map, start)?;
    check_endpoint(map, goal)?;
    let idx = |c: GridCell| c.1 * map.width + c.0;
    let h = |c: GridCell| (c.0 as f64 - goal.0 as f64).hypot(c.1 as f64 - goal.1 as f64);
    let mut g = vec![f64::INFINITY; map.width * map.height];
    let mut parent: Vec<Option<GridCell>> = vec![None; map.width * map.height];
    let mut closed = vec![false; map.width * map.height];
    let mut open = BinaryHeap::new();
    let mut order = 0;
    g[idx(start)] = 0.0;
    open.push(Open { f: h(start), order, cell: start });
    while let Some(Open { cell, .. }) = open.pop() {
        if closed[idx(cell)] {
            continue;
        }
        if cell == goal {
            let mut cells = vec![goal];
            let mut at = goal;
            while let Some(p) = parent[idx(at)] {
                cells.push(p);
                at = p;
            }
            cells.reverse();
            return Ok(PlannedPath { cells, cost: g[idx(goal)] });
        }
        closed[idx(cell)] = true;
        for (next, step) in neighbors(map, cell) {
            let cand = g[idx(cell)] + step;
            if cand < g[idx(next)] {
                g[idx(next)] = cand;
                parent[idx(next)] = Some(cell);
                order += 1;
                open.push(Open { f: cand + h(next), order, cell: next });
            }
        }
    }
    Err(MissionError::NoPath(start, goal))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    LocalizationDrift,
    Obstacle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome", content = "reason")]
pub enum NavOutcome {
    Reached,
    Failed(FailureReason),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavResult {
    pub outcome: NavOutcome,
    pub path: Vec<GridCell>,
    /// One tick per move along the path, whatever the outcome.
    pub ticks: u64,
}

/// One Bernoulli(`success_p`) draw per attempt.
pub fn simulate_navigation(plan: &PlannedPath, success_p: f64, rng: &mut StageRng) -> Result<NavResult, MissionError> {
    if !(0.0..=1.0).contains(&success_p) {
        return Err(MissionError::InvalidRate(success_p));
    }
    let reached = rng.random_bool(success_p);
    let reason = if rng.random_bool(0.5) { FailureReason::LocalizationDrift } else { FailureReason::Obstacle };
    Ok(NavResult {
        outcome: if reached { NavOutcome::Reached } else { NavOutcome::Failed(reason) },
        path: plan.cells.clone(),
        ticks: plan.cells.len().saturating_sub(1) as u64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub mac: Mac,
    pub x: f64,
    pub y: f64,
}

/// Log-distance path loss with Gaussian shadowing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioModel {
    /// RSSI at 1 m, dBm.
    pub rssi0: f64,
    pub exponent: f64,
    pub sigma_db: f64,
}

impl Default for RadioModel {
    fn default() -> Self {
        Self { rssi0: -40.0, exponent: 2.0, sigma_db: 2.0 }
    }
}

/// `rssi0 − 10·n·log10(max(d, 0.1)) + N(0, σ)`, clamped to [−100, 0].
pub fn synth_rssi(anchors: &[Anchor], position: (f64, f64), model: &RadioModel, rng: &mut StageRng) -> Vec<f64> {
    let noise = Normal::new(0.0, model.sigma_db.max(0.0)).expect("finite sigma");
    anchors
        .iter()
        .map(|a| {
            let d = (a.x - position.0).hypot(a.y - position.1).max(0.1);
            let v = model.rssi0 - 10.0 * model.exponent * d.log10() + noise.sample(rng);
            v.clamp(-100.0, 0.0)
        })
        .collect()
}

/// Anchors spread over a `w`×`h` m area: corners inset by 0.5 m, then centre.
pub fn default_anchors(count: usize, w: f64, h: f64) -> Vec<Anchor> {
    let spots = [(0.5, 0.5), (w - 0.5, 0.5), (w - 0.5, h - 0.5), (0.5, h - 0.5), (w / 2.0, h / 2.0)];
    (0..count)
        .map(|i| {
            let (x, y) = if i < spots.len() {
                spots[i]
            } else {
                let k = (i - spots.len() + 1) as f64 / (count - spots.len() + 1) as f64;
                (w * k, h * (1.0 - k))
            };
            Anchor { mac: Mac([0x02, 0xfa, 0x11, 0, (i >> 8) as u8, i as u8]), x, y }
        })
        .collect()
}

/// Uniform random positions in `[0, w] × [0, h]` with their RSSI vectors.
pub fn synth_loc_samples(anchors: &[Anchor], w: f64, h: f64, n: usize, model: &RadioModel, seed: u64, stream: &str) -> Vec<LocSample> {
    let mut rng = seeds::stream_rng(seed, stream, 0);
    (0..n)
        .map(|_| {
            let p = (rng.random_range(0.0..=w), rng.random_range(0.0..=h));
            LocSample { rssi: synth_rssi(anchors, p, model, &mut rng), target: [p.0, p.1] }
        })
        .collect()
}

/// Walled room: a one-cell border and a partition across the middle with a
/// 1 m doorway.
pub fn synth_room(width_m: f64, height_m: f64, resolution: f64) -> Result<OccupancyRaster, MissionError> {
    let w = (width_m / resolution).round() as usize;
    let h = (height_m / resolution).round() as usize;
    if w < 8 || h < 8 {
        return Err(MissionError::InvalidScenario(format!("room {width_m}×{height_m} m too small")));
    }
    let mut map = OccupancyRaster::new(w, h, resolution, (0.0, 0.0), Cell::Free)?;
    for x in 0..w {
        map.set(x, 0, Cell::Occupied);
        map.set(x, h - 1, Cell::Occupied);
    }
    for y in 0..h {
        map.set(0, y, Cell::Occupied);
        map.set(w - 1, y, Cell::Occupied);
    }
    let door = ((1.0 / resolution).round() as usize).max(2);
    let wall_y = h / 2;
    for x in 0..w.saturating_sub(door + 1) {
        map.set(x, wall_y, Cell::Occupied);
    }
    Ok(map)
}

fn nearest_free(map: &OccupancyRaster, x: f64, y: f64) -> Option<GridCell> {
    if let Some(c) = map.world_to_grid(x, y) {
        if map.cell(c.0, c.1) == Cell::Free {
            return Some(c);
        }
    }
    let mut best: Option<(f64, GridCell)> = None;
    for gy in 0..map.height {
        for gx in 0..map.width {
            if map.cell(gx, gy) != Cell::Free {
                continue;
            }
            let (cx, cy) = map.grid_to_world(gx, gy);
            let d = (cx - x).hypot(cy - y);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, (gx, gy)));
            }
        }
    }
    best.map(|b| b.1)
}

/// Robot survey: visit random free cells along planned paths. Odometry
/// accumulates a random-walk error; the drift stream (1 Hz) carries the
/// correction and beacons report every 100 ms (readings at the −100 floor
/// are not heard).
pub fn synth_survey(
    map: &OccupancyRaster,
    anchors: &[Anchor],
    model: &RadioModel,
    waypoints: usize,
    seed: u64,
) -> Result<SurveyLogs, MissionError> {
    let mut rng = seeds::stream_rng(seed, "mission.survey", 0);
    let free: Vec<GridCell> = (0..map.height)
        .flat_map(|y| (0..map.width).map(move |x| (x, y)))
        .filter(|&(x, y)| map.cell(x, y) == Cell::Free)
        .collect();
    if free.is_empty() {
        return Err(MissionError::InvalidScenario("map has no free cells".into()));
    }
    let mut at = free[rng.random_range(0..free.len())];
    let mut cells = vec![at];
    for _ in 0..waypoints {
        let goal = free[rng.random_range(0..free.len())];
        if let Ok(p) = plan_path(map, at, goal) {
            cells.extend(&p.cells[1..]);
            at = goal;
        }
    }
    // 0.5 m/s along the cells, pose at 5 Hz
    let step_t = map.resolution / 0.5;
    let end_t = (cells.len() - 1) as f64 * step_t;
    let pos = |t: f64| {
        let u = (t / step_t).clamp(0.0, (cells.len() - 1) as f64);
        let i = (u.floor() as usize).min(cells.len() - 1);
        let j = (i + 1).min(cells.len() - 1);
        let (a, b) = (map.grid_to_world(cells[i].0, cells[i].1), map.grid_to_world(cells[j].0, cells[j].1));
        let f = u - i as f64;
        (a.0 + (b.0 - a.0) * f, a.1 + (b.1 - a.1) * f)
    };
    let mut logs = SurveyLogs::default();
    let walk = Normal::new(0.0, 0.01).expect("finite sigma");
    let (mut ex, mut ey) = (0.0, 0.0);
    let mut t = 0.0;
    let mut k = 0u64;
    while t <= end_t {
        let p = pos(t);
        ex += walk.sample(&mut rng);
        ey += walk.sample(&mut rng);
        logs.pose.push(PoseSample { t, x: p.0 - ex, y: p.1 - ey });
        if k % 5 == 0 {
            logs.drift.push(DriftSample { t, dx: ex, dy: ey });
        }
        k += 1;
        t = k as f64 * 0.2;
    }
    let mut tick = 0u64;
    let mut bt = 0.0;
    while bt <= end_t {
        let rssi = synth_rssi(anchors, pos(bt), model, &mut rng);
        for (a, (anchor, v)) in anchors.iter().zip(rssi).enumerate() {
            if v > -100.0 {
                logs.rssi.push(RssiSample { t: bt + a as f64 * 0.001, mac: anchor.mac, rssi: v });
            }
        }
        tick += 1;
        bt = tick as f64 * 0.1;
    }
    Ok(logs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PipelineState {
    Idle,
    FallSuspected,
    Localizing,
    Navigating,
    Inspecting,
    Confirmed,
    FalseAlarm,
    Aborted,
}

impl PipelineState {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Confirmed | Self::FalseAlarm | Self::Aborted)
    }
}

/// Legal edges of the event chart.
pub fn is_legal(from: PipelineState, to: PipelineState) -> bool {
    use PipelineState::*;
    matches!(
        (from, to),
        (Idle, FallSuspected)
            | (FallSuspected, Localizing)
            | (Localizing, Navigating)
            | (Navigating, Inspecting)
            | (Inspecting, Confirmed)
            | (Inspecting, FalseAlarm)
    ) || (to == Aborted && !from.is_terminal())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stimulus {
    /// Classifier flagged `window` (or a fault forced the trigger).
    FallDetected { window: Window, forced: bool },
    RssiCollected { rssi: Vec<f64> },
    LocationFix { x: f64, y: f64 },
    Navigation(NavResult),
    Inspection { fallen: bool },
    Abort { reason: String },
}

impl Stimulus {
    pub fn name(&self) -> &'static str {
        match self {
            Self::FallDetected { .. } => "fall_detected",
            Self::RssiCollected { .. } => "rssi_collected",
            Self::LocationFix { .. } => "location_fix",
            Self::Navigation(_) => "navigation",
            Self::Inspection { .. } => "inspection",
            Self::Abort { .. } => "abort",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineEvent {
    pub event_id: u64,
    pub state: PipelineState,
    pub trigger: Option<Window>,
    pub location: Option<[f64; 2]>,
    pub verdict: Option<bool>,
    pub reason: Option<String>,
    pub transitions: Vec<TransitionRecord>,
}

impl PipelineEvent {
    pub fn new(event_id: u64) -> Self {
        Self {
            event_id,
            state: PipelineState::Idle,
            trigger: None,
            location: None,
            verdict: None,
            reason: None,
            transitions: Vec::new(),
        }
    }
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub event_id: u64,
    pub tick: u64,
    pub from: PipelineState,
    pub to: PipelineState,
    pub stimulus: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertMessage {
    pub event_id: u64,
    pub tick: u64,
    pub location: [f64; 2],
}

/// A rejected trigger, kept for retraining the detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub event_id: u64,
    pub tick: u64,
    pub label: String,
    pub window: Window,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Emission {
    Alert(AlertMessage),
    Feedback(FeedbackRecord),
}

/// Apply one stimulus. Confirmed emits an alert, FalseAlarm a feedback
/// record holding the triggering window.
pub fn step_event(event: &PipelineEvent, stimulus: &Stimulus, tick: u64) -> Result<(PipelineEvent, Option<Emission>), MissionError> {
    use PipelineState::*;
    let illegal = || MissionError::IllegalTransition { state: event.state, stimulus: stimulus.name().into() };
    let mut next = event.clone();
    let to = match (event.state, stimulus) {
        (s, Stimulus::Abort { reason }) if !s.is_terminal() => {
            next.reason = Some(reason.clone());
            Aborted
        }
        (Idle, Stimulus::FallDetected { window, .. }) => {
            next.trigger = Some(window.clone());
            FallSuspected
        }
        (FallSuspected, Stimulus::RssiCollected { .. }) => Localizing,
        (Localizing, Stimulus::LocationFix { x, y }) => {
            next.location = Some([*x, *y]);
            Navigating
        }
        (Navigating, Stimulus::Navigation(nav)) => match nav.outcome {
            NavOutcome::Reached => Inspecting,
            NavOutcome::Failed(reason) => {
                next.reason = Some(serde_json::to_value(reason)?.as_str().unwrap_or_default().to_string());
                Aborted
            }
        },
        (Inspecting, Stimulus::Inspection { fallen }) => {
            next.verdict = Some(*fallen);
            if *fallen { Confirmed } else { FalseAlarm }
        }
        _ => return Err(illegal()),
    };
    let record = TransitionRecord {
        event_id: event.event_id,
        tick,
        from: event.state,
        to,
        stimulus: stimulus.name().into(),
        location: if to == Navigating { next.location } else { None },
        verdict: if matches!(to, Confirmed | FalseAlarm) { next.verdict } else { None },
        reason: if to == Aborted { next.reason.clone() } else { None },
    };
    next.state = to;
    next.transitions.push(record);
    let emission = match to {
        Confirmed => Some(Emission::Alert(AlertMessage {
            event_id: event.event_id,
            tick,
            location: next.location.unwrap_or_default(),
        })),
        FalseAlarm => Some(Emission::Feedback(FeedbackRecord {
            event_id: event.event_id,
            tick,
            label: "false_positive".into(),
            window: next.trigger.clone().ok_or_else(illegal)?,
        })),
        _ => None,
    };
    Ok((next, emission))
}

/// Replay a log: each event starts in Idle, every edge is legal and follows
/// the previous one, nothing follows a terminal state. Alerts must match
/// Confirmed events one to one, feedback records FalseAlarm events.
pub fn validate_log(log: &[TransitionRecord], alerts: &[AlertMessage], feedback: &[FeedbackRecord]) -> Result<(), MissionError> {
    let bad = |m: String| Err(MissionError::InvalidLog(m));
    let mut state: BTreeMap<u64, PipelineState> = BTreeMap::new();
    for (i, r) in log.iter().enumerate() {
        let current = state.get(&r.event_id).copied().unwrap_or(PipelineState::Idle);
        if r.from != current {
            return bad(format!("line {}: event {} is in {current:?}, record says {:?}", i + 1, r.event_id, r.from));
        }
        if current.is_terminal() || !is_legal(r.from, r.to) {
            return bad(format!("line {}: illegal {:?} -> {:?}", i + 1, r.from, r.to));
        }
        state.insert(r.event_id, r.to);
    }
    for (id, s) in &state {
        let a = alerts.iter().filter(|x| x.event_id == *id).count();
        let f = feedback.iter().filter(|x| x.event_id == *id).count();
        let (want_a, want_f) = (usize::from(*s == PipelineState::Confirmed), usize::from(*s == PipelineState::FalseAlarm));
        if a != want_a || f != want_f {
            return bad(format!("event {id} ended {s:?} with {a} alerts and {f} feedback records"));
        }
    }
    for x in alerts {
        if !state.contains_key(&x.event_id) {
            return bad(format!("alert for unknown event {}", x.event_id));
        }
    }
    for x in feedback {
        if !state.contains_key(&x.event_id) {
            return bad(format!("feedback for unknown event {}", x.event_id));
        }
    }
    Ok(())
}

/// Per-stage failure rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReliabilityModel {
    pub detect_fail: f64,
    pub nav_fail: f64,
    pub vision_fail: f64,
}

impl Default for ReliabilityModel {
    fn default() -> Self {
        Self { detect_fail: 0.0081, nav_fail: 0.05, vision_fail: 0.0367 }
    }
}

impl ReliabilityModel {
    pub fn none() -> Self {
        Self { detect_fail: 0.0, nav_fail: 0.0, vision_fail: 0.0 }
    }

    pub fn rates(&self) -> [f64; 3] {
        [self.detect_fail, self.nav_fail, self.vision_fail]
    }

    pub fn validate(&self) -> Result<(), MissionError> {
        for r in self.rates() {
            if !(0.0..=1.0).contains(&r) {
                return Err(MissionError::InvalidRate(r));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reliability {
    pub failure: f64,
    pub accuracy_pct: f64,
}

impl Reliability {
    fn from_failure(failure: f64) -> Self {
        Self { failure, accuracy_pct: 100.0 * (1.0 - failure) }
    }
}

/// Failure = product of the stage failure rates (every stage must fail).
pub fn product_failure(rates: &[f64]) -> Result<Reliability, MissionError> {
    let mut failure = 1.0;
    for &r in rates {
        if !(0.0..=1.0).contains(&r) {
            return Err(MissionError::InvalidRate(r));
        }
        failure *= r;
    }
    Ok(Reliability::from_failure(failure))
}

pub fn combined_reliability(model: &ReliabilityModel) -> Result<Reliability, MissionError> {
    product_failure(&model.rates())
}

/// Alternative reading: any stage failure loses the event, so success is
/// ∏(1 − rate).
pub fn serial_reliability(model: &ReliabilityModel) -> Result<Reliability, MissionError> {
    model.validate()?;
    let success: f64 = model.rates().iter().map(|r| 1.0 - r).product();
    Ok(Reliability::from_failure(1.0 - success))
}

/// How injected stage failures combine into a missed fall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReliabilityMode {
    /// Stages back each other up: a fall is lost only when the detector,
    /// the navigation and the visual check all fail on it. Single failures
    /// are counted but absorbed.
    #[default]
    Redundant,
    /// Every injected failure takes effect: a missed detection, a failed
    /// navigation (after retries) or a wrong visual verdict.
    Serial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoomSpec {
    pub width_m: f64,
    pub height_m: f64,
    pub resolution: f64,
}

impl Default for RoomSpec {
    fn default() -> Self {
        Self { width_m: 10.0, height_m: 10.0, resolution: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimScenario {
    pub name: String,
    /// PGM map; a generated room is used when absent.
    pub map: Option<PathBuf>,
    pub room: RoomSpec,
    pub anchors: Vec<Anchor>,
    pub robot_start: [f64; 2],
    /// User walks these at `walk_speed` until the fall.
    pub user_waypoints: Vec<[f64; 2]>,
    pub walk_speed: f64,
    /// Start of the falling motion; the impact follows within a few seconds.
    pub fall_at_s: Option<f64>,
    /// Detector fault: a trigger forced at this time.
    pub false_trigger_at_s: Option<f64>,
    pub duration_s: f64,
    pub seed: u64,
    pub radio: RadioModel,
    pub errors: ReliabilityModel,
    pub reliability_mode: ReliabilityMode,
    pub nav_retries: usize,
    /// Consecutive fall windows needed to raise an event.
    pub debounce: usize,
    /// Detector ignores this long after a false alarm.
    pub cooldown_s: f64,
}

impl Default for SimScenario {
    fn default() -> Self {
        let room = RoomSpec::default();
        Self {
            name: "fall".into(),
            map: None,
            anchors: default_anchors(5, room.width_m, room.height_m),
            room,
            robot_start: [1.0, 1.0],
            user_waypoints: vec![[2.0, 8.0], [8.0, 8.0], [8.0, 6.5]],
            walk_speed: 0.8,
            fall_at_s: Some(4.0),
            false_trigger_at_s: None,
            duration_s: 12.0,
            seed: 1,
            radio: RadioModel::default(),
            errors: ReliabilityModel::none(),
            reliability_mode: ReliabilityMode::Redundant,
            nav_retries: 1,
            debounce: 2,
            cooldown_s: 5.0,
        }
    }
}

impl SimScenario {
    /// Fault-free fall.
    pub fn fall() -> Self {
        Self::default()
    }

    /// No fall; the detector is forced to trigger once.
    pub fn false_trigger() -> Self {
        Self {
            name: "false_trigger".into(),
            fall_at_s: None,
            false_trigger_at_s: Some(3.0),
            duration_s: 8.0,
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self, MissionError> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn validate(&self) -> Result<(), MissionError> {
        let bad = |m: String| Err(MissionError::InvalidScenario(m));
        self.errors.validate()?;
        if self.user_waypoints.is_empty() {
            return bad("no user waypoints".into());
        }
        if !(self.duration_s > 0.0) || !(self.walk_speed > 0.0) {
            return bad("duration and walk speed must be positive".into());
        }
        if let Some(t) = self.fall_at_s {
            if !(t >= 0.0 && self.duration_s - t >= 4.0) {
                return bad(format!("fall at {t} s leaves less than 4 s of the {} s run", self.duration_s));
            }
        }
        if self.debounce == 0 {
            return bad("debounce must be at least 1".into());
        }
        Ok(())
    }

    pub fn raster(&self) -> Result<OccupancyRaster, MissionError> {
        match &self.map {
            Some(p) => Ok(OccupancyRaster::load(p)?),
            None => synth_room(self.room.width_m, self.room.height_m, self.room.resolution),
        }
    }

    /// User position `t` seconds in (stationary from the fall on).
    fn user_position(&self, t: f64) -> (f64, f64) {
        let t = self.fall_at_s.map_or(t, |f| t.min(f));
        let mut left = t * self.walk_speed;
        let pts = &self.user_waypoints;
        for pair in pts.windows(2) {
            let seg = (pair[1][0] - pair[0][0]).hypot(pair[1][1] - pair[0][1]);
            if left <= seg && seg > 0.0 {
                let f = left / seg;
                return (pair[0][0] + (pair[1][0] - pair[0][0]) * f, pair[0][1] + (pair[1][1] - pair[0][1]) * f);
            }
            left -= seg;
        }
        let last = pts[pts.len() - 1];
        (last[0], last[1])
    }
}

/// Trained inputs of a scenario run.
#[derive(Default, Clone)]
pub struct Artifacts {
    pub fall: Option<FallModelArtifact>,
    pub loc: Option<LocModel>,
    pub vision: Option<SceneClassifier>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    fn add(&mut self, truth: bool, predicted: bool) {
        match (truth, predicted) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fn_ += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct InjectedFaults {
    pub detect: bool,
    pub nav_attempts_failed: usize,
    pub vision: bool,
    /// All three stages failed on the fall (redundant mode).
    pub all_failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ScenarioMetrics {
    pub fall_occurred: bool,
    pub missed: bool,
    pub confirmed: usize,
    pub false_alarms: usize,
    pub aborted: usize,
    pub detector: Confusion,
    pub vision: Confusion,
    pub injected: InjectedFaults,
    pub ticks: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub log: Vec<TransitionRecord>,
    pub alerts: Vec<AlertMessage>,
    pub feedback: Vec<FeedbackRecord>,
    pub metrics: ScenarioMetrics,
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), MissionError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

impl ScenarioOutcome {
    /// `events.jsonl`, `alerts.jsonl`, `feedback.jsonl` and `metrics.json`.
    pub fn write(&self, dir: &Path) -> Result<(), MissionError> {
        std::fs::create_dir_all(dir)?;
        write_jsonl(&dir.join("events.jsonl"), &self.log)?;
        write_jsonl(&dir.join("alerts.jsonl"), &self.alerts)?;
        write_jsonl(&dir.join("feedback.jsonl"), &self.feedback)?;
        std::fs::write(dir.join("metrics.json"), serde_json::to_vec_pretty(&self.metrics)?)?;
        Ok(())
    }
}

/// A preprocessed window with its ground truth.
struct TimedWindow {
    window: Window,
    fall: bool,
}

/// The wearer's IMU stream as normalized windows, one per tick. With a fall
/// the stream is an ADL segment followed by a fall segment; windows reaching
/// into the impact span of the latter, or later, are fall truth.
fn imu_windows(scenario: &SimScenario, artifact: &FallModelArtifact) -> Result<Vec<TimedWindow>, MissionError> {
    let pre = &artifact.preproc;
    let profile = MotionProfile::for_subject(seeds::derive_seed(scenario.seed, "mission.wearer", 0));
    let imu_seed = seeds::derive_seed(scenario.seed, "mission.imu", 0);
    let mut segments = Vec::new();
    match scenario.fall_at_s {
        Some(t) => {
            if t > 0.0 {
                segments.push((TraceKind::Adl, t));
            }
            segments.push((TraceKind::Fall, scenario.duration_s - t));
        }
        None => segments.push((TraceKind::Adl, scenario.duration_s)),
    }
    let mut out = Vec::new();
    for (k, (kind, span)) in segments.into_iter().enumerate() {
        let trace = signal_io::synth_trace_with(&profile, kind, imu_seed.wrapping_add(k as u64), span, SISFALL_RATE_HZ)
            .map_err(FedError::from)?;
        let ts = pre.clean(&trace).map_err(FedError::from)?;
        if ts.len() < pre.window_len {
            continue;
        }
        let truth = match kind {
            TraceKind::Fall => Some(preproc::impact_span(&ts, pre.trim_margin).map_err(FedError::from)?),
            TraceKind::Adl => None,
        };
        for w in preproc::make_windows(&ts, pre.window_len, pre.step, "wearer").map_err(FedError::from)? {
            // the wearer stays down after the impact
            let fall = truth.is_some_and(|(s, _)| w.start_index + w.len() > s);
            out.push(TimedWindow { window: preproc::apply_normalizer(&w, &artifact.norm_bounds), fall });
        }
    }
    Ok(out)
}

struct Runner<'a> {
    scenario: &'a SimScenario,
    map: OccupancyRaster,
    loc: &'a LocModel,
    vision: &'a SceneClassifier,
    robot: GridCell,
    log: Vec<TransitionRecord>,
    alerts: Vec<AlertMessage>,
    feedback: Vec<FeedbackRecord>,
    metrics: ScenarioMetrics,
}

impl Runner<'_> {
    fn apply(&mut self, event: &mut PipelineEvent, stimulus: Stimulus, tick: u64) -> Result<(), MissionError> {
        let (next, emission) = step_event(event, &stimulus, tick)?;
        self.log.push(next.transitions.last().expect("step records a transition").clone());
        match emission {
            Some(Emission::Alert(a)) => self.alerts.push(a),
            Some(Emission::Feedback(f)) => self.feedback.push(f),
            None => {}
        }
        *event = next;
        Ok(())
    }

    /// Drive one event from trigger to a terminal state; returns the end tick.
    fn mission(
        &mut self,
        event_id: u64,
        trigger: Window,
        forced: bool,
        mut tick: u64,
        tick_s: f64,
        nav_fail: f64,
        vision_fault: bool,
    ) -> Result<(PipelineState, u64), MissionError> {
        let sc = self.scenario;
        let mut event = PipelineEvent::new(event_id);
        self.apply(&mut event, Stimulus::FallDetected { window: trigger, forced }, tick)?;

        let user = sc.user_position(tick as f64 * tick_s);
        let mut radio = seeds::stream_rng(sc.seed, "mission.radio", event_id);
        let mut rssi = vec![self.loc.floor_dbm; self.loc.anchors.len()];
        let heard = synth_rssi(&sc.anchors, user, &sc.radio, &mut radio);
        for (a, v) in sc.anchors.iter().zip(heard) {
            if let Some(col) = self.loc.anchors.iter().position(|m| *m == a.mac) {
                rssi[col] = v;
            }
        }
        tick += 1;
        self.apply(&mut event, Stimulus::RssiCollected { rssi: rssi.clone() }, tick)?;

        let [x, y] = self.loc.predict(&rssi)?;
        tick += 1;
        self.apply(&mut event, Stimulus::LocationFix { x, y }, tick)?;

        let Some(goal) = nearest_free(&self.map, x, y) else {
            self.apply(&mut event, Stimulus::Abort { reason: "no_free_cell".into() }, tick)?;
            return Ok((event.state, tick));
        };
        let plan = match plan_path(&self.map, self.robot, goal) {
            Ok(p) => p,
            Err(MissionError::NoPath(..)) => {
                self.apply(&mut event, Stimulus::Abort { reason: "no_path".into() }, tick)?;
                return Ok((event.state, tick));
            }
            Err(e) => return Err(e),
        };
        let mut nav_rng = seeds::stream_rng(sc.seed, "mission.nav", event_id);
        let mut result = simulate_navigation(&plan, 1.0 - nav_fail, &mut nav_rng)?;
        tick += result.ticks;
        for _ in 0..sc.nav_retries {
            if result.outcome == NavOutcome::Reached {
                break;
            }
            self.metrics.injected.nav_attempts_failed += 1;
            result = simulate_navigation(&plan, 1.0 - nav_fail, &mut nav_rng)?;
            tick += result.ticks;
        }
        if result.outcome != NavOutcome::Reached {
            self.metrics.injected.nav_attempts_failed += 1;
        }
        let reached = result.outcome == NavOutcome::Reached;
        self.apply(&mut event, Stimulus::Navigation(result), tick)?;
        if !reached {
            return Ok((event.state, tick));
        }
        self.robot = goal;

        let fallen_now = sc.fall_at_s.is_some_and(|f| tick as f64 * tick_s >= f);
        let scene = synth_scene(fallen_now, seeds::derive_seed(sc.seed, "mission.scene", 0), event_id);
        let mut verdict = self.vision.predict(&extract_features(&scene));
        if vision_fault {
            verdict = !verdict;
        }
        self.metrics.vision.add(fallen_now, verdict);
        tick += 1;
        self.apply(&mut event, Stimulus::Inspection { fallen: verdict }, tick)?;
        Ok((event.state, tick))
    }
}

/// Tick the scenario: wearer windows through the fall classifier (one tick
/// per window step), then localization, planning, navigation and visual
/// inspection for every raised event.
pub fn run_scenario(scenario: &SimScenario, artifacts: &Artifacts) -> Result<ScenarioOutcome, MissionError> {
    scenario.validate()?;
    let fall_art = artifacts.fall.as_ref().ok_or(MissionError::MissingArtifact("fall model"))?;
    let loc = artifacts.loc.as_ref().ok_or(MissionError::MissingArtifact("localization model"))?;
    let vision = artifacts.vision.as_ref().ok_or(MissionError::MissingArtifact("vision classifier"))?;
    let classifier: Classifier = fall_art.classifier()?;
    let map = scenario.raster()?;
    let start = map
        .world_to_grid(scenario.robot_start[0], scenario.robot_start[1])
        .ok_or_else(|| MissionError::InvalidScenario("robot start outside the map".into()))?;
    check_endpoint(&map, start)?;

    let windows = imu_windows(scenario, fall_art)?;
    let tick_s = fall_art.preproc.step as f64 / fall_art.preproc.resample_hz;

    // stage faults for the fall, drawn once per scenario
    let mut faults = seeds::stream_rng(scenario.seed, "mission.faults", 0);
    let draws = [
        faults.random_bool(scenario.errors.detect_fail),
        faults.random_bool(scenario.errors.nav_fail),
        faults.random_bool(scenario.errors.vision_fail),
    ];
    let fall_occurred = scenario.fall_at_s.is_some();
    let mut metrics = ScenarioMetrics { fall_occurred, ..Default::default() };
    let (detect_fault, vision_fault, nav_fail) = match scenario.reliability_mode {
        ReliabilityMode::Redundant => {
            let all = draws.iter().all(|d| *d);
            metrics.injected = InjectedFaults { detect: draws[0], nav_attempts_failed: 0, vision: draws[2], all_failed: all };
            (all, false, 0.0)
        }
        ReliabilityMode::Serial => {
            metrics.injected = InjectedFaults { detect: draws[0], nav_attempts_failed: 0, vision: draws[2], all_failed: false };
            (draws[0], draws[2], scenario.errors.nav_fail)
        }
    };

    let mut run = Runner {
        scenario,
        map,
        loc,
        vision,
        robot: start,
        log: Vec::new(),
        alerts: Vec::new(),
        feedback: Vec::new(),
        metrics,
    };
    let forced_tick = scenario.false_trigger_at_s.map(|t| (t / tick_s).round() as u64);
    let mut streak = 0;
    let mut resume_at = 0u64;
    let mut event_id = 0u64;
    let mut done = false;
    let mut last_tick = 0;
    for (i, tw) in windows.iter().enumerate() {
        let tick = i as u64;
        last_tick = tick;
        let mut flagged = classifier.predict(&tw.window.values).map_err(FedError::from)? == 1;
        if tw.fall && detect_fault {
            flagged = false;
        }
        run.metrics.detector.add(tw.fall, flagged);
        if done || tick < resume_at {
            continue;
        }
        streak = if flagged { streak + 1 } else { 0 };
        let forced = forced_tick == Some(tick);
        if streak < scenario.debounce && !forced {
            continue;
        }
        streak = 0;
        let (end, end_tick) =
            run.mission(event_id, tw.window.clone(), forced, tick, tick_s, nav_fail, vision_fault && fall_occurred)?;
        event_id += 1;
        last_tick = last_tick.max(end_tick);
        match end {
            PipelineState::Confirmed => {
                run.metrics.confirmed += 1;
                done = true;
            }
            PipelineState::Aborted => {
                run.metrics.aborted += 1;
                done = true;
            }
            _ => {
                run.metrics.false_alarms += 1;
                resume_at = end_tick.max(tick) + (scenario.cooldown_s / tick_s).ceil() as u64;
            }
        }
    }
    run.metrics.missed = fall_occurred && run.metrics.confirmed == 0;
    run.metrics.ticks = last_tick;
    validate_log(&run.log, &run.alerts, &run.feedback)?;
    Ok(ScenarioOutcome { log: run.log, alerts: run.alerts, feedback: run.feedback, metrics: run.metrics })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub scenarios: usize,
    pub falls: usize,
    pub missed: usize,
    pub confirmed: usize,
    pub false_alarms: usize,
    pub aborted: usize,
    pub all_stage_failures: usize,
    pub expected_missed: f64,
}

/// `n` copies of `template` with per-scenario seeds, run in parallel.
pub fn monte_carlo(template: &SimScenario, artifacts: &Artifacts, n: usize, seed: u64) -> Result<MonteCarloSummary, MissionError> {
    let outcomes = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let sc = SimScenario { seed: seeds::derive_seed(seed, "mission.montecarlo", i), ..template.clone() };
            run_scenario(&sc, artifacts).map(|o| o.metrics)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let expected = match template.reliability_mode {
        ReliabilityMode::Redundant => combined_reliability(&template.errors)?.failure,
        ReliabilityMode::Serial => serial_reliability(&template.errors)?.failure,
    };
    Ok(MonteCarloSummary {
        scenarios: n,
        falls: outcomes.iter().filter(|m| m.fall_occurred).count(),
        missed: outcomes.iter().filter(|m| m.missed).count(),
        confirmed: outcomes.iter().map(|m| m.confirmed).sum(),
        false_alarms: outcomes.iter().map(|m| m.false_alarms).sum(),
        aborted: outcomes.iter().map(|m| m.aborted).sum(),
        all_stage_failures: outcomes.iter().filter(|m| m.injected.all_failed).count(),
        expected_missed: expected * n as f64,
    })
}
