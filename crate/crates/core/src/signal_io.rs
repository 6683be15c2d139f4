//! Wearable IMU input: SisFall-style trial files, unit conversion, synthetic
//! traces and packet aggregation.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeds;

/// Columns in one SisFall row: accelerometer 1, gyroscope, accelerometer 2.
pub const RAW_COLUMNS: usize = 9;

/// Native SisFall sampling rate.
pub const SISFALL_RATE_HZ: f64 = 200.0;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("empty trial file")]
    EmptyFile,
    #[error("line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("unknown activity code `{0}`")]
    UnknownCode(String),
    #[error("duration and rate must be positive (duration {duration}, rate {rate})")]
    InvalidDuration { duration: f64, rate: f64 },
    #[error("packet size must be at least 1")]
    InvalidK,
    #[error("invalid sensor scale: {0}")]
    InvalidScale(String),
    #[error("cannot parse trial file name `{0}`")]
    BadFileName(String),
}

/// SisFall activity code: `F01`..`F15` for falls, `D01`..`D19` for ADLs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ActivityCode {
    fall: bool,
    number: u8,
}

impl ActivityCode {
    pub fn is_fall(self) -> bool {
        self.fall
    }

    pub fn number(self) -> u8 {
        self.number
    }
}

impl FromStr for ActivityCode {
    type Err = SignalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || SignalError::UnknownCode(s.to_string());
        if s.len() != 3 || !s.is_ascii() {
            return Err(unknown());
        }
        let (prefix, digits) = s.split_at(1);
        let number: u8 = digits.parse().map_err(|_| unknown())?;
        let (fall, max) = match prefix {
            "F" => (true, 15),
            "D" => (false, 19),
            _ => return Err(unknown()),
        };
        if number == 0 || number > max {
            return Err(unknown());
        }
        Ok(Self { fall, number })
    }
}

impl TryFrom<String> for ActivityCode {
    type Error = SignalError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<ActivityCode> for String {
    fn from(code: ActivityCode) -> Self {
        code.to_string()
    }
}

impl fmt::Display for ActivityCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:02}", if self.fall { 'F' } else { 'D' }, self.number)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialMeta {
    pub subject_id: String,
    pub activity: ActivityCode,
    pub trial_index: u32,
}

impl TrialMeta {
    /// Parse a SisFall file name such as `F01_SA01_R01.txt`.
    pub fn from_file_name(name: &str) -> Result<Self, SignalError> {
        let bad = || SignalError::BadFileName(name.to_string());
        let stem = name.strip_suffix(".txt").unwrap_or(name);
        let mut parts = stem.split('_');
        let (Some(code), Some(subject), Some(trial), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad());
        };
        let activity = code.parse().map_err(|_| bad())?;
        let trial_index = trial
            .strip_prefix('R')
            .and_then(|r| r.parse::<u32>().ok())
            .filter(|&r| r >= 1)
            .ok_or_else(bad)?;
        Ok(Self {
            subject_id: subject.to_string(),
            activity,
            trial_index,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTrial {
    pub meta: TrialMeta,
    pub rows: Vec<[i32; RAW_COLUMNS]>,
}

/// Parse the comma-separated body of a SisFall trial file.
///
/// Rows end with `;` or a newline. Blank lines and trailing terminators are
/// ignored.
pub fn parse_trial(text: &str, meta: TrialMeta) -> Result<RawTrial, SignalError> {
    let mut rows = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        for chunk in line.split(';') {
            let chunk = chunk.trim();
            if chunk.is_empty() {
                continue;
            }
            rows.push(parse_row(chunk, line_no + 1)?);
        }
    }
    if rows.is_empty() {
        return Err(SignalError::EmptyFile);
    }
    Ok(RawTrial { meta, rows })
}

fn parse_row(chunk: &str, line: usize) -> Result<[i32; RAW_COLUMNS], SignalError> {
    let tokens: Vec<&str> = chunk.split(',').map(str::trim).collect();
    if tokens.len() != RAW_COLUMNS {
        return Err(SignalError::MalformedRow {
            line,
            reason: format!("expected {RAW_COLUMNS} columns, found {}", tokens.len()),
        });
    }
    let mut row = [0i32; RAW_COLUMNS];
    for (slot, token) in row.iter_mut().zip(&tokens) {
        *slot = token.parse().map_err(|_| SignalError::MalformedRow {
            line,
            reason: format!("`{token}` is not an integer"),
        })?;
    }
    Ok(row)
}

/// Inverse of [`parse_trial`] for the row body.
pub fn serialize_trial(trial: &RawTrial) -> String {
    let mut out = String::new();
    for row in &trial.rows {
        let cells: Vec<String> = row.iter().map(i32::to_string).collect();
        out.push_str(&cells.join(","));
        out.push_str(";\n");
    }
    out
}

/// Full-scale range and ADC resolution of one sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorScale {
    pub range: f64,
    pub resolution: u32,
}

impl SensorScale {
    pub const ACCEL_DEFAULT: SensorScale = SensorScale {
        range: 16.0,
        resolution: 13,
    };
    pub const GYRO_DEFAULT: SensorScale = SensorScale {
        range: 2000.0,
        resolution: 16,
    };

    pub fn new(range: f64, resolution: u32) -> Result<Self, SignalError> {
        let scale = Self { range, resolution };
        scale.validate()?;
        Ok(scale)
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if !(self.range.is_finite() && self.range > 0.0) {
            return Err(SignalError::InvalidScale(format!("range {}", self.range)));
        }
        if !(1..=32).contains(&self.resolution) {
            return Err(SignalError::InvalidScale(format!(
                "resolution {} bits",
                self.resolution
            )));
        }
        Ok(())
    }

    /// Physical units per raw count: `2 * range / 2^resolution`.
    pub fn factor(&self) -> f64 {
        2.0 * self.range / 2f64.powi(self.resolution as i32)
    }
}

pub fn convert_raw(raw: i32, scale: SensorScale) -> f64 {
    raw as f64 * scale.factor()
}

/// One IMU reading: acceleration in g, angular rate in deg/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSample {
    pub t: f64,
    pub a: [f64; 3],
    pub w: [f64; 3],
}

impl SensorSample {
    pub fn channels(&self) -> [f64; 6] {
        [self.a[0], self.a[1], self.a[2], self.w[0], self.w[1], self.w[2]]
    }

    pub fn accel_magnitude(&self) -> f64 {
        self.a.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Which raw columns feed the accelerometer and gyroscope channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSelector {
    pub accel: [usize; 3],
    pub gyro: [usize; 3],
    pub accel_scale: SensorScale,
    pub gyro_scale: SensorScale,
}

impl Default for ChannelSelector {
    fn default() -> Self {
        Self {
            accel: [0, 1, 2],
            gyro: [3, 4, 5],
            accel_scale: SensorScale::ACCEL_DEFAULT,
            gyro_scale: SensorScale::GYRO_DEFAULT,
        }
    }
}

/// Convert a raw trial to physical samples at `rate_hz`, starting at t = 0.
pub fn trial_to_samples(
    trial: &RawTrial,
    selector: &ChannelSelector,
    rate_hz: f64,
) -> Vec<SensorSample> {
    trial
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| SensorSample {
            t: i as f64 / rate_hz,
            a: selector.accel.map(|c| convert_raw(row[c], selector.accel_scale)),
            w: selector.gyro.map(|c| convert_raw(row[c], selector.gyro_scale)),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceKind {
    Fall,
    Adl,
}

/// Per-wearer motion style used by the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionProfile {
    /// Gait frequency in Hz.
    pub step_hz: f64,
    /// Vertical bounce amplitude in g.
    pub bounce_g: f64,
    /// Lateral sway amplitude in g.
    pub sway_g: f64,
    /// Peak angular rate of the gait oscillation in deg/s.
    pub gyro_dps: f64,
    pub accel_noise_g: f64,
    pub gyro_noise_dps: f64,
}

impl Default for MotionProfile {
    fn default() -> Self {
        Self {
            step_hz: 1.8,
            bounce_g: 0.25,
            sway_g: 0.12,
            gyro_dps: 25.0,
            accel_noise_g: 0.02,
            gyro_noise_dps: 2.0,
        }
    }
}

impl MotionProfile {
    /// Draw a plausible wearer profile; subjects differ in cadence and vigour.
    pub fn for_subject(seed: u64) -> Self {
        let mut rng = seeds::stream_rng(seed, "signal_io.profile", 0);
        Self {
            step_hz: rng.random_range(1.4..2.2),
            bounce_g: rng.random_range(0.12..0.32),
            sway_g: rng.random_range(0.06..0.16),
            gyro_dps: rng.random_range(15.0..35.0),
            accel_noise_g: rng.random_range(0.01..0.03),
            gyro_noise_dps: rng.random_range(1.0..3.0),
        }
    }
}

/// Synthetic trace with the default wearer profile.
pub fn synth_trace(
    kind: TraceKind,
    seed: u64,
    duration: f64,
    rate: f64,
) -> Result<Vec<SensorSample>, SignalError> {
    synth_trace_with(&MotionProfile::default(), kind, seed, duration, rate)
}

const DESCENT_S: f64 = 1.2;
const IMPACT_WIDTH_S: f64 = 0.04;

/// Generate a labelled IMU trace.
///
/// ADL traces are upright gait-like oscillation plus noise. Fall traces start
/// the same way, then rotate gravity from the z axis to the x axis over a
/// short descent with dropping magnitude, hit one impact pulse of 6–8 g and
/// end lying still.
pub fn synth_trace_with(
    profile: &MotionProfile,
    kind: TraceKind,
    seed: u64,
    duration: f64,
    rate: f64,
) -> Result<Vec<SensorSample>, SignalError> {
    if !(duration > 0.0 && rate > 0.0 && duration.is_finite() && rate.is_finite()) {
        return Err(SignalError::InvalidDuration { duration, rate });
    }
    let stream = match kind {
        TraceKind::Fall => "signal_io.fall",
        TraceKind::Adl => "signal_io.adl",
    };
    let mut rng = seeds::stream_rng(seed, stream, 0);
    let n = (duration * rate).round().max(1.0) as usize;

    // trace-level variation around the wearer profile
    let vigour: f64 = rng.random_range(0.6..1.0);
    let freq = profile.step_hz * rng.random_range(0.9..1.1);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let accel_noise = Normal::new(0.0, profile.accel_noise_g).expect("finite sigma");
    let gyro_noise = Normal::new(0.0, profile.gyro_noise_dps).expect("finite sigma");

    let impact_t = match kind {
        TraceKind::Fall if duration > 2.0 * DESCENT_S + 1.0 => {
            duration * rng.random_range(0.45..0.6)
        }
        TraceKind::Fall => duration * 0.5,
        TraceKind::Adl => f64::INFINITY,
    };
    let impact_peak: f64 = rng.random_range(6.0..8.0);
    let rest_tilt: f64 = rng.random_range(-0.15..0.15);
    let descent_rate = 90.0 / DESCENT_S;

    let mut trace = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / rate;
        let gait = std::f64::consts::TAU * freq * t + phase;
        let (a, w) = if t < impact_t - DESCENT_S {
            upright_motion(profile, vigour, gait)
        } else if t < impact_t {
            let u = (t - (impact_t - DESCENT_S)) / DESCENT_S;
            let theta = u * std::f64::consts::FRAC_PI_2;
            let mag = 1.0 - 0.7 * u * u;
            (
                [mag * theta.sin(), 0.05 * gait.sin(), mag * theta.cos()],
                [10.0 * gait.sin(), descent_rate, 5.0 * gait.cos()],
            )
        } else {
            let dt = (t - impact_t) / IMPACT_WIDTH_S;
            let pulse = impact_peak * (-0.5 * dt * dt).exp();
            let rest = [rest_tilt.cos(), 0.0, rest_tilt.sin()];
            (
                [
                    rest[0] + 0.6 * pulse,
                    rest[1] + 0.2 * pulse,
                    rest[2] - 0.77 * pulse,
                ],
                [0.0, 40.0 * pulse, 0.0],
            )
        };
        let a = a.map(|v| v + accel_noise.sample(&mut rng));
        let w = w.map(|v| v + gyro_noise.sample(&mut rng));
        trace.push(SensorSample { t, a, w });
    }
    Ok(trace)
}

fn upright_motion(profile: &MotionProfile, vigour: f64, gait: f64) -> ([f64; 3], [f64; 3]) {
    let a = [
        vigour * profile.sway_g * (0.5 * gait).sin(),
        0.3 * vigour * profile.sway_g * gait.cos(),
        1.0 + vigour * profile.bounce_g * gait.sin(),
    ];
    let w = [
        vigour * profile.gyro_dps * gait.sin(),
        0.5 * vigour * profile.gyro_dps * (0.5 * gait).cos(),
        0.3 * vigour * profile.gyro_dps * gait.cos(),
    ];
    (a, w)
}

/// Write a trace as CSV with header `t,ax,ay,az,wx,wy,wz`.
pub fn write_trace_csv<W: Write>(trace: &[SensorSample], out: W) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["t", "ax", "ay", "az", "wx", "wy", "wz"])?;
    for s in trace {
        let mut record = vec![s.t.to_string()];
        record.extend(s.channels().iter().map(f64::to_string));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// `k` consecutive samples sent together by the wearable.
///
/// Samples are stored oldest first; `t_j` is the timestamp of the newest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub t_j: f64,
    pub samples: Vec<SensorSample>,
}

/// Samples per packet for a transmission interval, e.g. 0.5 s at 50 Hz → 25.
pub fn packet_size(interval_s: f64, rate_hz: f64) -> usize {
    (interval_s * rate_hz).round().max(1.0) as usize
}

/// Group a stream into non-overlapping packets of `k`; a partial tail is dropped.
pub fn packetize(stream: &[SensorSample], k: usize) -> Result<Vec<Packet>, SignalError> {
    if k < 1 {
        return Err(SignalError::InvalidK);
    }
    Ok(stream
        .chunks_exact(k)
        .map(|chunk| Packet {
            t_j: chunk[k - 1].t,
            samples: chunk.to_vec(),
        })
        .collect())
}
