//! RSSI fingerprint tables from robot survey logs: DTW timestamp alignment,
//! drift correction, missing-value fill, occupancy rasters and block heatmaps.

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pixel edge of a heatmap block.
pub const BLOCK: usize = 8;

/// RSSI written into cells that never received a reading.
pub const DEFAULT_FLOOR_DBM: f64 = -100.0;

#[derive(Debug, Error)]
pub enum FingerprintError {
    #[error("empty sequence")]
    EmptySequence,
    #[error("anchor {0} is not in the table")]
    UnknownAnchor(String),
    #[error("malformed MAC address `{0}`")]
    BadMac(String),
    #[error("malformed table: {0}")]
    BadTable(String),
    #[error("malformed map sidecar: {0}")]
    BadSidecar(String),
    #[error("map resolution must be positive, got {0}")]
    InvalidResolution(f64),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

/// Six-byte anchor identifier, written as `aa:bb:cc:dd:ee:ff`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Mac(pub [u8; 6]);

impl fmt::Display for Mac {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

impl FromStr for Mac {
    type Err = FingerprintError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FingerprintError::BadMac(s.to_string());
        let mut out = [0u8; 6];
        let mut parts = s.trim().split([':', '-']);
        for byte in &mut out {
            let part = parts.next().ok_or_else(bad)?;
            if part.len() != 2 {
                return Err(bad());
            }
            *byte = u8::from_str_radix(part, 16).map_err(|_| bad())?;
        }
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(Mac(out))
    }
}

impl Serialize for Mac {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Mac {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSample {
    pub t: f64,
    pub dx: f64,
    pub dy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RssiSample {
    pub t: f64,
    pub mac: Mac,
    pub rssi: f64,
}

/// Minimal-cost monotone alignment of two timestamp sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct DtwAlignment {
    pub cost: f64,
    /// Warping path from (0, 0) to (n−1, m−1).
    pub path: Vec<(usize, usize)>,
}

/// DTW with cost |a_i − b_j| and the three unit moves.
///
/// On equal accumulated costs the backtrack prefers the diagonal, then
/// (i−1, j), then (i, j−1).
pub fn dtw(a: &[f64], b: &[f64]) -> Result<DtwAlignment, FingerprintError> {
    if a.is_empty() || b.is_empty() {
        return Err(FingerprintError::EmptySequence);
    }
    let (n, m) = (a.len(), b.len());
    let mut acc = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let c = (a[i] - b[j]).abs();
            let prev = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[(i - 1) * m + j - 1] } else { f64::INFINITY };
                let up = if i > 0 { acc[(i - 1) * m + j] } else { f64::INFINITY };
                let left = if j > 0 { acc[i * m + j - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[i * m + j] = prev + c;
        }
    }
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        let step = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let diag = acc[(i - 1) * m + j - 1];
            let up = acc[(i - 1) * m + j];
            let left = acc[i * m + j - 1];
            if diag <= up && diag <= left {
                (i - 1, j - 1)
            } else if up <= left {
                (i - 1, j)
            } else {
                (i, j - 1)
            }
        };
        (i, j) = step;
        path.push(step);
    }
    path.reverse();
    Ok(DtwAlignment {
        cost: acc[n * m - 1],
        path,
    })
}

/// For every element of `a`, its lowest-cost partner in `b` among the pairs
/// on the warping path; ties go to the lower index.
pub fn partners_of_a(alignment: &DtwAlignment, a: &[f64], b: &[f64]) -> Vec<usize> {
    let mut best: Vec<Option<(f64, usize)>> = vec![None; a.len()];
    for &(i, j) in &alignment.path {
        let c = (a[i] - b[j]).abs();
        if best[i].is_none_or(|(bc, bj)| c < bc || (c == bc && j < bj)) {
            best[i] = Some((c, j));
        }
    }
    best.into_iter().map(|p| p.expect("path covers every index").1).collect()
}

/// For every element of `b`, its lowest-cost partner in `a`.
pub fn partners_of_b(alignment: &DtwAlignment, a: &[f64], b: &[f64]) -> Vec<usize> {
    let swapped = DtwAlignment {
        cost: alignment.cost,
        path: alignment.path.iter().map(|&(i, j)| (j, i)).collect(),
    };
    partners_of_a(&swapped, b, a)
}

/// Index pairs `(i in a, j in b)`: every element of the shorter sequence
/// (`b` on equal lengths) keeps its single lowest-cost partner.
pub fn dtw_align(a: &[f64], b: &[f64]) -> Result<Vec<(usize, usize)>, FingerprintError> {
    let alignment = dtw(a, b)?;
    Ok(if a.len() < b.len() {
        partners_of_a(&alignment, a, b).into_iter().enumerate().collect()
    } else {
        partners_of_b(&alignment, a, b)
            .into_iter()
            .enumerate()
            .map(|(j, i)| (i, j))
            .collect()
    })
}

/// Odometry shifted by the DTW-matched map-frame drift (additive).
pub fn correct_pose(
    odom: &[PoseSample],
    drift: &[DriftSample],
) -> Result<Vec<PoseSample>, FingerprintError> {
    let ta: Vec<f64> = odom.iter().map(|p| p.t).collect();
    let tb: Vec<f64> = drift.iter().map(|d| d.t).collect();
    let alignment = dtw(&ta, &tb)?;
    Ok(partners_of_a(&alignment, &ta, &tb)
        .into_iter()
        .zip(odom)
        .map(|(j, p)| PoseSample {
            t: p.t,
            x: p.x + drift[j].dx,
            y: p.y + drift[j].dy,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintRow {
    pub timestamp: f64,
    pub x: f64,
    pub y: f64,
    /// One cell per anchor column; `None` = no reading.
    pub rssi: Vec<Option<f64>>,
}

/// Position-tagged RSSI rows with a frozen anchor column order.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintTable {
    pub anchors: Vec<Mac>,
    pub rows: Vec<FingerprintRow>,
}

/// One row per pose. Each RSSI sample goes to its lowest-cost pose on the
/// warping path; within a row the latest reading per anchor wins. Anchor
/// columns follow first appearance in the RSSI stream.
pub fn build_table(
    poses: &[PoseSample],
    rssi: &[RssiSample],
) -> Result<FingerprintTable, FingerprintError> {
    let ta: Vec<f64> = poses.iter().map(|p| p.t).collect();
    let tb: Vec<f64> = rssi.iter().map(|r| r.t).collect();
    let alignment = dtw(&ta, &tb)?;
    let owner = partners_of_b(&alignment, &ta, &tb);

    let mut anchors: Vec<Mac> = Vec::new();
    for r in rssi {
        if !anchors.contains(&r.mac) {
            anchors.push(r.mac);
        }
    }
    let mut rows: Vec<FingerprintRow> = poses
        .iter()
        .map(|p| FingerprintRow {
            timestamp: p.t,
            x: p.x,
            y: p.y,
            rssi: vec![None; anchors.len()],
        })
        .collect();
    let mut stamp: Vec<Vec<f64>> = vec![vec![f64::NEG_INFINITY; anchors.len()]; poses.len()];
    for (r, &i) in rssi.iter().zip(&owner) {
        let col = anchors.iter().position(|m| *m == r.mac).expect("anchor registered");
        if r.t >= stamp[i][col] {
            stamp[i][col] = r.t;
            rows[i].rssi[col] = Some(r.rssi);
        }
    }
    Ok(FingerprintTable { anchors, rows })
}

/// Replace every missing cell with `floor_dbm`.
pub fn fill_missing(table: &FingerprintTable, floor_dbm: f64) -> FingerprintTable {
    FingerprintTable {
        anchors: table.anchors.clone(),
        rows: table
            .rows
            .iter()
            .map(|r| FingerprintRow {
                rssi: r.rssi.iter().map(|c| Some(c.unwrap_or(floor_dbm))).collect(),
                ..r.clone()
            })
            .collect(),
    }
}

impl FingerprintTable {
    pub fn has_missing(&self) -> bool {
        self.rows.iter().any(|r| r.rssi.iter().any(Option::is_none))
    }

    pub fn column(&self, mac: &Mac) -> Result<usize, FingerprintError> {
        self.anchors
            .iter()
            .position(|m| m == mac)
            .ok_or_else(|| FingerprintError::UnknownAnchor(mac.to_string()))
    }

    /// `Timestamp,X_Pos,Y_Pos,<MAC...>`; missing cells are empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), FingerprintError> {
        let mut writer = csv::Writer::from_writer(out);
        let mut header = vec!["Timestamp".to_string(), "X_Pos".into(), "Y_Pos".into()];
        header.extend(self.anchors.iter().map(Mac::to_string));
        writer.write_record(&header)?;
        for row in &self.rows {
            let mut record = vec![row.timestamp.to_string(), row.x.to_string(), row.y.to_string()];
            record.extend(row.rssi.iter().map(|c| c.map(|v| v.to_string()).unwrap_or_default()));
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, FingerprintError> {
        let mut reader = csv::Reader::from_reader(input);
        let header = reader.headers()?.clone();
        let fixed = ["Timestamp", "X_Pos", "Y_Pos"];
        if header.len() < 3 || header.iter().take(3).ne(fixed) {
            return Err(FingerprintError::BadTable(format!("unexpected header {header:?}")));
        }
        let anchors = header
            .iter()
            .skip(3)
            .map(str::parse)
            .collect::<Result<Vec<Mac>, _>>()?;
        let num = |s: &str, line: u64| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| FingerprintError::BadTable(format!("line {line}: bad number `{s}`")))
        };
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != header.len() {
                return Err(FingerprintError::BadTable(format!("line {line}: wrong field count")));
            }
            let rssi = record
                .iter()
                .skip(3)
                .map(|c| if c.trim().is_empty() { Ok(None) } else { num(c, line).map(Some) })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(FingerprintRow {
                timestamp: num(&record[0], line)?,
                x: num(&record[1], line)?,
                y: num(&record[2], line)?,
                rssi,
            });
        }
        Ok(Self { anchors, rows })
    }
}

fn read_log<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, FingerprintError> {
    let mut reader = csv::Reader::from_path(path)?;
    Ok(reader.deserialize().collect::<Result<Vec<T>, _>>()?)
}

fn write_log<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), FingerprintError> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// The three survey logs: `pose.csv` (t,x,y), `drift.csv` (t,dx,dy) and
/// `rssi.csv` (t,mac,rssi).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SurveyLogs {
    pub pose: Vec<PoseSample>,
    pub drift: Vec<DriftSample>,
    pub rssi: Vec<RssiSample>,
}

impl SurveyLogs {
    pub fn load(dir: &Path) -> Result<Self, FingerprintError> {
        Ok(Self {
            pose: read_log(&dir.join("pose.csv"))?,
            drift: read_log(&dir.join("drift.csv"))?,
            rssi: read_log(&dir.join("rssi.csv"))?,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<(), FingerprintError> {
        std::fs::create_dir_all(dir)?;
        write_log(&dir.join("pose.csv"), &self.pose)?;
        write_log(&dir.join("drift.csv"), &self.drift)?;
        write_log(&dir.join("rssi.csv"), &self.rssi)?;
        Ok(())
    }

    /// Drift correction followed by table construction.
    pub fn to_table(&self) -> Result<FingerprintTable, FingerprintError> {
        build_table(&correct_pose(&self.pose, &self.drift)?, &self.rssi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cell {
    Free,
    Occupied,
    Unknown,
}

/// Grid map. Cell `(gx, gy)` covers world `[ox + gx·res, ox + (gx+1)·res)`
/// horizontally and likewise vertically, with `gy = 0` at the bottom (image
/// rows are flipped on load and save).
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyRaster {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: (f64, f64),
    pub cells: Vec<Cell>,
}

impl OccupancyRaster {
    pub fn new(
        width: usize,
        height: usize,
        resolution: f64,
        origin: (f64, f64),
        fill: Cell,
    ) -> Result<Self, FingerprintError> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(FingerprintError::InvalidResolution(resolution));
        }
        Ok(Self {
            width,
            height,
            resolution,
            origin,
            cells: vec![fill; width * height],
        })
    }

    pub fn cell(&self, gx: usize, gy: usize) -> Cell {
        self.cells[gy * self.width + gx]
    }

    pub fn set(&mut self, gx: usize, gy: usize, cell: Cell) {
        self.cells[gy * self.width + gx] = cell;
    }

    pub fn world_to_grid(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let gx = ((x - self.origin.0) / self.resolution).floor();
        let gy = ((y - self.origin.1) / self.resolution).floor();
        if gx < 0.0 || gy < 0.0 || gx >= self.width as f64 || gy >= self.height as f64 {
            return None;
        }
        Some((gx as usize, gy as usize))
    }

    /// World coordinates of a cell centre.
    pub fn grid_to_world(&self, gx: usize, gy: usize) -> (f64, f64) {
        (
            self.origin.0 + (gx as f64 + 0.5) * self.resolution,
            self.origin.1 + (gy as f64 + 0.5) * self.resolution,
        )
    }

    /// Intensity classification on `v / 255`: < 0.2 occupied, > 0.8 free.
    pub fn classify(intensity: u8) -> Cell {
        let v = f64::from(intensity) / 255.0;
        if v < 0.2 {
            Cell::Occupied
        } else if v > 0.8 {
            Cell::Free
        } else {
            Cell::Unknown
        }
    }

    pub fn sidecar_path(pgm: &Path) -> PathBuf {
        pgm.with_extension("meta")
    }

    /// Read a PGM plus its sidecar (`resolution`, `origin_x`, `origin_y`,
    /// one `key: value` or `key = value` per line).
    pub fn load(pgm: &Path) -> Result<Self, FingerprintError> {
        let img = image::open(pgm)?.to_luma8();
        let sidecar = std::fs::read_to_string(Self::sidecar_path(pgm))?;
        let mut resolution = None;
        let mut origin = (None, None);
        for line in sidecar.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line
                .split_once([':', '='])
                .ok_or_else(|| FingerprintError::BadSidecar(line.to_string()))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| FingerprintError::BadSidecar(line.to_string()))?;
            match key.trim() {
                "resolution" => resolution = Some(value),
                "origin_x" => origin.0 = Some(value),
                "origin_y" => origin.1 = Some(value),
                other => return Err(FingerprintError::BadSidecar(format!("unknown key `{other}`"))),
            }
        }
        let missing = |k: &str| FingerprintError::BadSidecar(format!("missing `{k}`"));
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut raster = Self::new(
            w,
            h,
            resolution.ok_or_else(|| missing("resolution"))?,
            (origin.0.ok_or_else(|| missing("origin_x"))?, origin.1.ok_or_else(|| missing("origin_y"))?),
            Cell::Unknown,
        )?;
        for (px, py, p) in img.enumerate_pixels() {
            raster.set(px as usize, h - 1 - py as usize, Self::classify(p.0[0]));
        }
        Ok(raster)
    }

    pub fn save(&self, pgm: &Path) -> Result<(), FingerprintError> {
        let img = image::GrayImage::from_fn(self.width as u32, self.height as u32, |px, py| {
            let v = match self.cell(px as usize, self.height - 1 - py as usize) {
                Cell::Free => 254,
                Cell::Occupied => 0,
                Cell::Unknown => 128,
            };
            image::Luma([v])
        });
        write_pgm(pgm, &img)?;
        let mut side = std::fs::File::create(Self::sidecar_path(pgm))?;
        writeln!(side, "resolution: {}", self.resolution)?;
        writeln!(side, "origin_x: {}", self.origin.0)?;
        writeln!(side, "origin_y: {}", self.origin.1)?;
        Ok(())
    }
}

fn write_pgm(path: &Path, img: &image::GrayImage) -> Result<(), FingerprintError> {
    use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
    use image::ImageEncoder;
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    PnmEncoder::new(file)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::L8)?;
    Ok(())
}

/// Block-averaged RSSI of one anchor; `None` marks blocks without samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub anchor: Mac,
    pub blocks_x: usize,
    pub blocks_y: usize,
    /// Row-major with block row 0 at the bottom of the map.
    pub values: Vec<Option<f64>>,
    /// Rows that fell outside the raster.
    pub skipped: usize,
}

/// Mean RSSI of `anchor` over the table rows inside each 8×8-pixel block.
/// Values are summed in sorted order so the result does not depend on row
/// order. Missing cells are ignored.
pub fn render_heatmap(
    table: &FingerprintTable,
    raster: &OccupancyRaster,
    anchor: &Mac,
) -> Result<Heatmap, FingerprintError> {
    let col = table.column(anchor)?;
    let blocks_x = raster.width.div_ceil(BLOCK);
    let blocks_y = raster.height.div_ceil(BLOCK);
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); blocks_x * blocks_y];
    let mut skipped = 0;
    for row in &table.rows {
        match raster.world_to_grid(row.x, row.y) {
            Some((gx, gy)) => {
                if let Some(v) = row.rssi[col] {
                    buckets[(gy / BLOCK) * blocks_x + gx / BLOCK].push(v);
                }
            }
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} fingerprint rows lie outside the map and were skipped");
    }
    let values = buckets
        .into_iter()
        .map(|mut b| {
            if b.is_empty() {
                return None;
            }
            b.sort_by(f64::total_cmp);
            Some(b.iter().sum::<f64>() / b.len() as f64)
        })
        .collect();
    Ok(Heatmap {
        anchor: *anchor,
        blocks_x,
        blocks_y,
        values,
        skipped,
    })
}

impl Heatmap {
    pub fn value(&self, bx: usize, by: usize) -> Option<f64> {
        self.values[by * self.blocks_x + bx]
    }

    /// Grid of block values, top map row first; empty cell = no data.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), FingerprintError> {
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for by in (0..self.blocks_y).rev() {
            let record: Vec<String> = (0..self.blocks_x)
                .map(|bx| self.value(bx, by).map(|v| v.to_string()).unwrap_or_default())
                .collect();
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }

    /// One pixel per block: RSSI in [−100, 0] dBm maps to 1..=255 and
    /// no-data to 0; the mask is 255 where data exists.
    pub fn write_pgm(&self, heat: &Path, mask: &Path) -> Result<(), FingerprintError> {
        let (w, h) = (self.blocks_x as u32, self.blocks_y as u32);
        let at = |px: u32, py: u32| self.value(px as usize, self.blocks_y - 1 - py as usize);
        let img = image::GrayImage::from_fn(w, h, |px, py| {
            image::Luma([at(px, py).map_or(0, |v| {
                (1.0 + 254.0 * ((v + 100.0) / 100.0).clamp(0.0, 1.0)).round() as u8
            })])
        });
        let m = image::GrayImage::from_fn(w, h, |px, py| image::Luma([if at(px, py).is_some() { 255 } else { 0 }]));
        write_pgm(heat, &img)?;
        write_pgm(mask, &m)?;
        Ok(())
    }
}
