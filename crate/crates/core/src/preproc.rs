//! IMU cleaning: resampling, smoothing, windowing, normalisation, labels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal_io::{ActivityCode, SensorSample};

pub const CHANNELS: usize = 6;

pub type Frame = [f64; CHANNELS];

#[derive(Debug, Error, PartialEq)]
pub enum PreprocError {
    #[error("series too short: need {needed} samples, have {have}")]
    TooShort { needed: usize, have: usize },
    #[error("timestamps must be strictly increasing (index {0})")]
    NonMonotonic(usize),
    #[error("EWMA weight must be in (0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown activity code `{0}`")]
    UnknownCode(String),
    #[error("division by zero in sample count")]
    DivisionByZero,
    #[error("normaliser fitted on an empty window set")]
    EmptyTrainingSet,
}

/// Uniform-or-not multichannel series, one frame per timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub t: Vec<f64>,
    pub frames: Vec<Frame>,
}

impl TimeSeries {
    pub fn new(t: Vec<f64>, frames: Vec<Frame>) -> Result<Self, PreprocError> {
        assert_eq!(t.len(), frames.len(), "timestamps and frames differ in length");
        if let Some(i) = t.windows(2).position(|w| w[1] <= w[0]) {
            return Err(PreprocError::NonMonotonic(i + 1));
        }
        Ok(Self { t, frames })
    }

    pub fn from_samples(samples: &[SensorSample]) -> Result<Self, PreprocError> {
        Self::new(
            samples.iter().map(|s| s.t).collect(),
            samples.iter().map(SensorSample::channels).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn map_frames(&self, frames: Vec<Frame>) -> Self {
        Self {
            t: self.t.clone(),
            frames,
        }
    }

    fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            t: self.t[start..end].to_vec(),
            frames: self.frames[start..end].to_vec(),
        }
    }
}

/// Linear interpolation onto a grid `t0 + i/f` covering `[t0, t_end]`.
pub fn resample(ts: &TimeSeries, f: f64) -> Result<TimeSeries, PreprocError> {
    if ts.len() < 2 {
        return Err(PreprocError::TooShort {
            needed: 2,
            have: ts.len(),
        });
    }
    if !(f > 0.0 && f.is_finite()) {
        return Err(PreprocError::InvalidConfig(format!("resample rate {f}")));
    }
    let t0 = ts.t[0];
    let span = ts.t[ts.len() - 1] - t0;
    let n = (span * f + 1e-9).floor() as usize + 1;
    let mut t = Vec::with_capacity(n);
    let mut frames = Vec::with_capacity(n);
    let mut j = 0;
    for i in 0..n {
        let ti = t0 + i as f64 / f;
        while j + 2 < ts.len() && ts.t[j + 1] <= ti {
            j += 1;
        }
        let (ta, tb) = (ts.t[j], ts.t[j + 1]);
        let u = ((ti - ta) / (tb - ta)).clamp(0.0, 1.0);
        let (fa, fb) = (&ts.frames[j], &ts.frames[j + 1]);
        let mut frame = [0.0; CHANNELS];
        for c in 0..CHANNELS {
            frame[c] = if u == 0.0 {
                fa[c]
            } else if u == 1.0 {
                fb[c]
            } else {
                fa[c] + u * (fb[c] - fa[c])
            };
        }
        t.push(ti);
        frames.push(frame);
    }
    Ok(TimeSeries { t, frames })
}

/// Recursive EWMA: `y0 = x0`, `y_t = α x_t + (1 − α) y_{t−1}`.
pub fn ewma(ts: &TimeSeries, alpha: f64) -> Result<TimeSeries, PreprocError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(PreprocError::InvalidAlpha(alpha));
    }
    let mut out = Vec::with_capacity(ts.len());
    let mut prev: Option<Frame> = None;
    for x in &ts.frames {
        let y = match prev {
            None => *x,
            Some(p) => {
                let mut y = [0.0; CHANNELS];
                for c in 0..CHANNELS {
                    y[c] = alpha * x[c] + (1.0 - alpha) * p[c];
                }
                y
            }
        };
        out.push(y);
        prev = Some(y);
    }
    Ok(ts.map_frames(out))
}

/// Least-squares polynomial weights over a window of `window` equally spaced
/// points (offsets `-half..=half`), evaluated at `offset`.
pub fn savgol_coefficients(window: usize, order: usize, offset: f64) -> Vec<f64> {
    let half = (window / 2) as f64;
    let terms = order + 1;
    // normal matrix M = AᵀA with A[i][k] = x_i^k
    let xs: Vec<f64> = (0..window).map(|i| i as f64 - half).collect();
    let mut m = vec![vec![0.0; terms]; terms];
    for (r, row) in m.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            *cell = xs.iter().map(|x| x.powi((r + c) as i32)).sum();
        }
    }
    // solve M z = p(offset), then weights w_i = Σ_k z_k x_i^k
    let rhs: Vec<f64> = (0..terms).map(|k| offset.powi(k as i32)).collect();
    let z = solve_dense(m, rhs);
    xs.iter()
        .map(|x| z.iter().enumerate().map(|(k, zk)| zk * x.powi(k as i32)).sum())
        .collect()
}

/// Gaussian elimination with partial pivoting for the small normal systems above.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty");
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x
}

/// Savitzky–Golay smoothing. Edge samples take the value of the first/last
/// full-window fit evaluated at their own offset, so the length is unchanged.
pub fn savgol(ts: &TimeSeries, window: usize, order: usize) -> Result<TimeSeries, PreprocError> {
    if window % 2 == 0 || order >= window {
        return Err(PreprocError::InvalidConfig(format!(
            "savgol window {window} order {order}"
        )));
    }
    let n = ts.len();
    if n < window {
        return Err(PreprocError::TooShort {
            needed: window,
            have: n,
        });
    }
    let half = window / 2;
    let center = savgol_coefficients(window, order, 0.0);
    let edge: Vec<Vec<f64>> = (0..window)
        .map(|i| savgol_coefficients(window, order, i as f64 - half as f64))
        .collect();
    let apply = |weights: &[f64], start: usize| {
        let mut frame = [0.0; CHANNELS];
        for (k, w) in weights.iter().enumerate() {
            for (c, out) in frame.iter_mut().enumerate() {
                *out += w * ts.frames[start + k][c];
            }
        }
        frame
    };
    let frames = (0..n)
        .map(|i| {
            if i < half {
                apply(&edge[i], 0)
            } else if i + half >= n {
                apply(&edge[i + window - n], n - window)
            } else {
                apply(&center, i - half)
            }
        })
        .collect();
    Ok(ts.map_frames(frames))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub values: Vec<Frame>,
    pub source: String,
    pub start_index: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledWindow {
    pub window: Window,
    pub label: u8,
}

/// Overlapping windows of `l` frames every `step` frames.
pub fn make_windows(
    ts: &TimeSeries,
    l: usize,
    step: usize,
    source: &str,
) -> Result<Vec<Window>, PreprocError> {
    if l < 2 || step < 1 {
        return Err(PreprocError::InvalidConfig(format!("window {l} step {step}")));
    }
    if ts.len() < l {
        return Err(PreprocError::TooShort {
            needed: l,
            have: ts.len(),
        });
    }
    Ok((0..=ts.len() - l)
        .step_by(step)
        .map(|start| Window {
            values: ts.frames[start..start + l].to_vec(),
            source: source.to_string(),
            start_index: start,
        })
        .collect())
}

/// Per-channel min/max learned on training windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormBounds {
    pub min: Frame,
    pub max: Frame,
}

impl NormBounds {
    /// Channels whose training range collapsed to a point; they map to 0.
    pub fn degenerate_channels(&self) -> Vec<usize> {
        (0..CHANNELS).filter(|&c| self.min[c] >= self.max[c]).collect()
    }

    pub fn apply_frame(&self, frame: &Frame) -> Frame {
        let mut out = [0.0; CHANNELS];
        for c in 0..CHANNELS {
            let span = self.max[c] - self.min[c];
            out[c] = if span > 0.0 {
                2.0 * (frame[c] - self.min[c]) / span - 1.0
            } else {
                0.0
            };
        }
        out
    }
}

pub fn fit_normalizer<'a, I>(windows: I) -> Result<NormBounds, PreprocError>
where
    I: IntoIterator<Item = &'a Window>,
{
    let mut min = [f64::INFINITY; CHANNELS];
    let mut max = [f64::NEG_INFINITY; CHANNELS];
    let mut seen = false;
    for frame in windows.into_iter().flat_map(|w| &w.values) {
        seen = true;
        for c in 0..CHANNELS {
            min[c] = min[c].min(frame[c]);
            max[c] = max[c].max(frame[c]);
        }
    }
    if !seen {
        return Err(PreprocError::EmptyTrainingSet);
    }
    let bounds = NormBounds { min, max };
    for c in bounds.degenerate_channels() {
        log::warn!("channel {c} is constant in the training set; it will normalise to 0");
    }
    Ok(bounds)
}

/// Map into [−1, 1] with frozen bounds. No clamping: unseen data may overshoot.
pub fn apply_normalizer(window: &Window, bounds: &NormBounds) -> Window {
    Window {
        values: window.values.iter().map(|f| bounds.apply_frame(f)).collect(),
        source: window.source.clone(),
        start_index: window.start_index,
    }
}

pub fn label_activity(code: &str) -> Result<u8, PreprocError> {
    let code: ActivityCode = code
        .parse()
        .map_err(|_| PreprocError::UnknownCode(code.to_string()))?;
    Ok(u8::from(code.is_fall()))
}

/// Inclusive index range kept by [`trim_fall`].
pub fn impact_span(ts: &TimeSeries, margin: usize) -> Result<(usize, usize), PreprocError> {
    if ts.is_empty() {
        return Err(PreprocError::TooShort { needed: 1, have: 0 });
    }
    let mut peak = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, f) in ts.frames.iter().enumerate() {
        let mag = (f[0] * f[0] + f[1] * f[1] + f[2] * f[2]).sqrt();
        if mag > best {
            best = mag;
            peak = i;
        }
    }
    Ok((
        peak.saturating_sub(margin),
        (peak + margin).min(ts.len() - 1),
    ))
}

/// Keep `margin` frames either side of the acceleration-magnitude peak.
pub fn trim_fall(ts: &TimeSeries, margin: usize) -> Result<TimeSeries, PreprocError> {
    let (start, end) = impact_span(ts, margin)?;
    Ok(ts.slice(start, end + 1))
}

/// Training-sample count `r = k·J / (f·l)`.
pub fn sample_count(k: f64, j: f64, f: f64, l: f64) -> Result<f64, PreprocError> {
    let denom = f * l;
    if denom == 0.0 {
        return Err(PreprocError::DivisionByZero);
    }
    Ok(k * j / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Ewma,
    Savgol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocConfig {
    pub resample_hz: f64,
    pub window_len: usize,
    pub step: usize,
    pub ewma_alpha: f64,
    pub savgol_window: usize,
    pub savgol_order: usize,
    pub ewma_enabled: bool,
    pub savgol_enabled: bool,
    pub filter_order: Vec<FilterKind>,
    /// Frames kept either side of the impact when trimming fall trials.
    pub trim_margin: usize,
}

impl Default for PreprocConfig {
    fn default() -> Self {
        Self {
            resample_hz: 50.0,
            window_len: 40,
            step: 10,
            ewma_alpha: 0.3,
            savgol_window: 5,
            savgol_order: 2,
            ewma_enabled: true,
            savgol_enabled: true,
            filter_order: vec![FilterKind::Ewma, FilterKind::Savgol],
            trim_margin: 80,
        }
    }
}

impl PreprocConfig {
    pub fn validate(&self) -> Result<(), PreprocError> {
        let bad = |msg: String| Err(PreprocError::InvalidConfig(msg));
        if self.savgol_order >= self.savgol_window || self.savgol_window % 2 == 0 {
            return bad(format!(
                "savgol window {} / order {}",
                self.savgol_window, self.savgol_order
            ));
        }
        if self.step < 1 || self.window_len < 2 {
            return bad(format!("window {} step {}", self.window_len, self.step));
        }
        if !(self.ewma_alpha > 0.0 && self.ewma_alpha <= 1.0) {
            return Err(PreprocError::InvalidAlpha(self.ewma_alpha));
        }
        if !(self.resample_hz > 0.0) {
            return bad(format!("resample rate {}", self.resample_hz));
        }
        Ok(())
    }

    /// Resample, then run the enabled filters in `filter_order`.
    pub fn clean(&self, samples: &[SensorSample]) -> Result<TimeSeries, PreprocError> {
        self.validate()?;
        let mut ts = resample(&TimeSeries::from_samples(samples)?, self.resample_hz)?;
        for kind in &self.filter_order {
            ts = match kind {
                FilterKind::Ewma if self.ewma_enabled => ewma(&ts, self.ewma_alpha)?,
                FilterKind::Savgol if self.savgol_enabled => {
                    savgol(&ts, self.savgol_window, self.savgol_order)?
                }
                _ => ts,
            };
        }
        Ok(ts)
    }

    /// Clean a trial and cut it into windows; fall trials are trimmed
    /// around the impact first.
    pub fn trial_windows(
        &self,
        samples: &[SensorSample],
        is_fall: bool,
        source: &str,
    ) -> Result<Vec<Window>, PreprocError> {
        let mut ts = self.clean(samples)?;
        if is_fall {
            ts = trim_fall(&ts, self.trim_margin)?;
        }
        make_windows(&ts, self.window_len, self.step, source)
    }
}
