//! Seeded generators for the 2D benchmark densities plus a tabular loader.
//!
//! Generator constructions follow the de-facto standard 2D suite used across
//! flow papers; every constant is frozen in [`constants`] and echoed into the
//! sample provenance so results stay reproducible if constants are retuned.
//! All synthetic generators emit points with ‖x‖∞ ≤ 5 (draws outside the box
//! are redrawn; this is vanishingly rare for every kind).

use crate::error::Error;
use crate::rng::stream;
use crate::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

/// Frozen generator constants, echoed into provenance.
pub mod constants {
    /// Hard bound on all synthetic outputs (∞-norm).
    pub const BOX_BOUND: f64 = 5.0;

    /// Checkerboard: cells are built on [−2,2]² then scaled.
    pub const CHECKERBOARD_SCALE: f64 = 2.0;

    /// Two spirals: max turn angle (radians), arm offset noise, isotropic jitter.
    pub const SPIRAL_MAX_ANGLE: f64 = 3.0 * std::f64::consts::PI;
    pub const SPIRAL_ARM_NOISE: f64 = 0.5;
    pub const SPIRAL_JITTER: f64 = 0.1;
    pub const SPIRAL_SCALE: f64 = 1.0 / 3.0;

    /// Swiss roll (2D projection): t ∈ 1.5π·[1, 3], unit noise, 1/5 scale.
    pub const SWISS_T_MIN: f64 = 1.5 * std::f64::consts::PI;
    pub const SWISS_T_SPAN: f64 = 3.0 * std::f64::consts::PI;
    pub const SWISS_NOISE: f64 = 1.0;
    pub const SWISS_SCALE: f64 = 0.2;

    /// Eight Gaussians: modes on a radius-4 circle with σ = 0.5, then the
    /// whole cloud is shrunk by 1/√2 (modes land on radius 2√2).
    pub const EIGHT_RADIUS: f64 = 4.0;
    pub const EIGHT_STD: f64 = 0.5;

    /// Concentric circles: radii 1 and 0.5, noise 0.08, ×3.
    pub const CIRCLES_FACTOR: f64 = 0.5;
    pub const CIRCLES_NOISE: f64 = 0.08;
    pub const CIRCLES_SCALE: f64 = 3.0;

    /// Pinwheel: five blades.
    pub const PINWHEEL_CLASSES: usize = 5;
    pub const PINWHEEL_RADIAL_STD: f64 = 0.3;
    pub const PINWHEEL_TANGENTIAL_STD: f64 = 0.1;
    pub const PINWHEEL_RATE: f64 = 0.25;
    pub const PINWHEEL_SCALE: f64 = 2.0;

    /// Two moons: unit half-circles, noise 0.1, ×2 then shifted.
    pub const MOONS_NOISE: f64 = 0.1;
    pub const MOONS_SCALE: f64 = 2.0;
    pub const MOONS_SHIFT: [f64; 2] = [-1.0, -0.2];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Checkerboard,
    TwoSpirals,
    SwissRoll,
    EightGaussians,
    Circles,
    Pinwheel,
    Moons,
    Tabular,
}

impl DatasetKind {
    pub const SYNTHETIC: [DatasetKind; 7] = [
        DatasetKind::Checkerboard,
        DatasetKind::TwoSpirals,
        DatasetKind::SwissRoll,
        DatasetKind::EightGaussians,
        DatasetKind::Circles,
        DatasetKind::Pinwheel,
        DatasetKind::Moons,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DatasetKind::Checkerboard => "checkerboard",
            DatasetKind::TwoSpirals => "two_spirals",
            DatasetKind::SwissRoll => "swiss_roll",
            DatasetKind::EightGaussians => "eight_gaussians",
            DatasetKind::Circles => "circles",
            DatasetKind::Pinwheel => "pinwheel",
            DatasetKind::Moons => "moons",
            DatasetKind::Tabular => "tabular",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "checkerboard" => DatasetKind::Checkerboard,
            "two_spirals" | "2spirals" => DatasetKind::TwoSpirals,
            "swiss_roll" | "swissroll" => DatasetKind::SwissRoll,
            "eight_gaussians" | "8gaussians" => DatasetKind::EightGaussians,
            "circles" => DatasetKind::Circles,
            "pinwheel" => DatasetKind::Pinwheel,
            "moons" => DatasetKind::Moons,
            "tabular" => DatasetKind::Tabular,
            other => {
                return Err(Error::invalid(format!(
                    "unknown dataset kind '{other}' (expected one of: checkerboard, two_spirals, \
                     swiss_roll, eight_gaussians, circles, pinwheel, moons, tabular)"
                )))
            }
        })
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What to sample: a synthetic kind, or a tabular file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// Tabular only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl DatasetSpec {
    pub fn synthetic(kind: DatasetKind) -> Self {
        DatasetSpec { kind, path: None }
    }
}

/// Where a sample batch came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    /// Generator constants in effect when the batch was drawn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<serde_json::Value>,
}

impl Provenance {
    pub fn new(source: impl Into<String>, seed: u64) -> Self {
        Provenance {
            source: source.into(),
            seed,
            split: None,
            params: None,
        }
    }
}

/// An n×d batch of float64 points with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    n: usize,
    d: usize,
    data: Vec<f64>,
    pub provenance: Provenance,
}

impl SampleMatrix {
    pub fn from_flat(n: usize, d: usize, data: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::invalid("sample matrix must be nonempty"));
        }
        if data.len() != n * d {
            return Err(Error::invalid("sample matrix shape mismatch"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "sample matrix",
            });
        }
        Ok(SampleMatrix {
            n,
            d,
            data,
            provenance,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Select rows by index (provenance tagged with `split`).
    pub fn select(&self, idx: &[usize], split: &str) -> SampleMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        let mut provenance = self.provenance.clone();
        provenance.split = Some(split.to_string());
        SampleMatrix {
            n: idx.len(),
            d: self.d,
            data,
            provenance,
        }
    }

    /// Deterministic shuffle-then-split into two parts; `frac` goes to the
    /// first part (at least one row stays in each when possible).
    pub fn split_two(&self, frac: f64, seed: u64, names: (&str, &str)) -> (SampleMatrix, SampleMatrix) {
        let mut idx: Vec<usize> = (0..self.n).collect();
        shuffle(&mut idx, &mut stream(seed, crate::rng::tags::VALIDATION_SPLIT));
        let n_first = ((self.n as f64 * frac).floor() as usize).clamp(1, self.n.saturating_sub(1).max(1));
        (
            self.select(&idx[..n_first], names.0),
            self.select(&idx[n_first..], names.1),
        )
    }

    /// Standard normal draws in `d` dimensions.
    pub fn standard_normal(n: usize, d: usize, seed: u64) -> Result<SampleMatrix> {
        let mut rng = stream(seed, 0x4e4f_524d);
        let data: Vec<f64> = (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        SampleMatrix::from_flat(n, d, data, Provenance::new(format!("standard_normal_{d}d"), seed))
    }

    /// Unit-covariance Gaussian centered at `mean`.
    pub fn gaussian_blob(n: usize, mean: &[f64], seed: u64) -> Result<SampleMatrix> {
        let d = mean.len();
        let mut rng = stream(seed, 0x424c_4f42);
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            for &mu in mean {
                data.push(mu + rng.sample::<f64, _>(StandardNormal));
            }
        }
        SampleMatrix::from_flat(n, d, data, Provenance::new(format!("gaussian_blob_{d}d"), seed))
    }

    /// Write rows as comma-separated float64 text with 17 significant digits
    /// (round-trips bit-exactly), plus a provenance sidecar JSON.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        for row in self.rows() {
            let mut first = true;
            for v in row {
                if !first {
                    w.write_all(b",")?;
                }
                write!(w, "{}", format_f64(*v))?;
                first = false;
            }
            w.write_all(b"\n")?;
        }
        w.flush()?;
        let sidecar = provenance_sidecar(path);
        let json = serde_json::to_string_pretty(&serde_json::json!({
            "n": self.n,
            "d": self.d,
            "provenance": self.provenance,
        }))
        .map_err(|e| Error::Serialization(e.to_string()))?;
        std::fs::write(sidecar, json)?;
        Ok(())
    }

    /// Read a CSV written by [`SampleMatrix::write_csv`] (or any numeric CSV
    /// with an optional non-numeric header row).
    pub fn read_csv(path: &Path) -> Result<SampleMatrix> {
        let (rows, d) = read_numeric_csv(path)?;
        let n = rows.len() / d;
        SampleMatrix::from_flat(
            n,
            d,
            rows,
            Provenance::new(format!("csv:{}", path.display()), 0),
        )
    }
}

/// Sidecar path: `samples.csv` → `samples.csv.provenance.json`.
pub fn provenance_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".provenance.json");
    PathBuf::from(s)
}

/// 17-significant-digit decimal text; parses back to the identical bits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn shuffle(idx: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..idx.len()).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
}

fn constants_echo(kind: DatasetKind) -> serde_json::Value {
    use constants::*;
    match kind {
        DatasetKind::Checkerboard => serde_json::json!({"scale": CHECKERBOARD_SCALE}),
        DatasetKind::TwoSpirals => serde_json::json!({
            "max_angle": SPIRAL_MAX_ANGLE, "arm_noise": SPIRAL_ARM_NOISE,
            "jitter": SPIRAL_JITTER, "scale": SPIRAL_SCALE}),
        DatasetKind::SwissRoll => serde_json::json!({
            "t_min": SWISS_T_MIN, "t_span": SWISS_T_SPAN,
            "noise": SWISS_NOISE, "scale": SWISS_SCALE}),
        DatasetKind::EightGaussians => serde_json::json!({
            "radius": EIGHT_RADIUS, "std": EIGHT_STD, "shrink": "1/sqrt(2)"}),
        DatasetKind::Circles => serde_json::json!({
            "factor": CIRCLES_FACTOR, "noise": CIRCLES_NOISE, "scale": CIRCLES_SCALE}),
        DatasetKind::Pinwheel => serde_json::json!({
            "classes": PINWHEEL_CLASSES, "radial_std": PINWHEEL_RADIAL_STD,
            "tangential_std": PINWHEEL_TANGENTIAL_STD, "rate": PINWHEEL_RATE,
            "scale": PINWHEEL_SCALE}),
        DatasetKind::Moons => serde_json::json!({
            "noise": MOONS_NOISE, "scale": MOONS_SCALE, "shift": MOONS_SHIFT}),
        DatasetKind::Tabular => serde_json::json!({}),
    }
}

/// Draw `n` points from a synthetic 2D benchmark density. Deterministic per
/// `(spec, seed)`.
pub fn sample(spec: &DatasetSpec, n: usize, seed: u64) -> Result<SampleMatrix> {
    if spec.kind == DatasetKind::Tabular {
        return Err(Error::invalid(
            "tabular datasets are loaded with load_tabular, not sampled",
        ));
    }
    if n == 0 {
        return Err(Error::invalid("sample count must be >= 1"));
    }
    let mut rng = stream(seed, 0x6474_0000 + spec.kind as u64);
    let mut data = Vec::with_capacity(n * 2);
    let mut point = [0.0f64; 2];
    for _ in 0..n {
        loop {
            draw_point(spec.kind, &mut rng, &mut point);
            if point[0].abs() <= constants::BOX_BOUND && point[1].abs() <= constants::BOX_BOUND {
                break;
            }
        }
        data.extend_from_slice(&point);
    }
    let mut provenance = Provenance::new(spec.kind.name(), seed);
    provenance.params = Some(constants_echo(spec.kind));
    SampleMatrix::from_flat(n, 2, data, provenance)
}

fn draw_point(kind: DatasetKind, rng: &mut ChaCha8Rng, out: &mut [f64; 2]) {
    use constants::*;
    use std::f64::consts::PI;
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    match kind {
        DatasetKind::Checkerboard => {
            let x1: f64 = rng.gen_range(-2.0..2.0);
            let shift = if rng.gen_bool(0.5) { 0.0 } else { -2.0 };
            let x2 = rng.gen_range(0.0..1.0) + shift + (x1.floor() as i64).rem_euclid(2) as f64;
            out[0] = x1 * CHECKERBOARD_SCALE;
            out[1] = x2 * CHECKERBOARD_SCALE;
        }
        DatasetKind::TwoSpirals => {
            let r = rng.gen_range(0.0f64..1.0).sqrt() * SPIRAL_MAX_ANGLE;
            let x = -r.cos() * r + rng.gen_range(0.0..1.0) * SPIRAL_ARM_NOISE;
            let y = r.sin() * r + rng.gen_range(0.0..1.0) * SPIRAL_ARM_NOISE;
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            out[0] = sign * x * SPIRAL_SCALE + SPIRAL_JITTER * normal(rng);
            out[1] = sign * y * SPIRAL_SCALE + SPIRAL_JITTER * normal(rng);
        }
        DatasetKind::SwissRoll => {
            let t = SWISS_T_MIN + SWISS_T_SPAN * rng.gen_range(0.0f64..1.0);
            out[0] = (t * t.cos() + SWISS_NOISE * normal(rng)) * SWISS_SCALE;
            out[1] = (t * t.sin() + SWISS_NOISE * normal(rng)) * SWISS_SCALE;
        }
        DatasetKind::EightGaussians => {
            let k = rng.gen_range(0..8u32);
            let ang = k as f64 * PI / 4.0;
            let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
            out[0] = (EIGHT_RADIUS * ang.cos() + EIGHT_STD * normal(rng)) * inv_sqrt2;
            out[1] = (EIGHT_RADIUS * ang.sin() + EIGHT_STD * normal(rng)) * inv_sqrt2;
        }
        DatasetKind::Circles => {
            let ang = rng.gen_range(0.0..(2.0 * PI));
            let r = if rng.gen_bool(0.5) { 1.0 } else { CIRCLES_FACTOR };
            out[0] = (r * ang.cos() + CIRCLES_NOISE * normal(rng)) * CIRCLES_SCALE;
            out[1] = (r * ang.sin() + CIRCLES_NOISE * normal(rng)) * CIRCLES_SCALE;
        }
        DatasetKind::Pinwheel => {
            let class = rng.gen_range(0..PINWHEEL_CLASSES);
            let f0 = 1.0 + PINWHEEL_RADIAL_STD * normal(rng);
            let f1 = PINWHEEL_TANGENTIAL_STD * normal(rng);
            let ang = 2.0 * PI * class as f64 / PINWHEEL_CLASSES as f64 + PINWHEEL_RATE * f0.exp();
            out[0] = PINWHEEL_SCALE * (f0 * ang.cos() + f1 * ang.sin());
            out[1] = PINWHEEL_SCALE * (-f0 * ang.sin() + f1 * ang.cos());
        }
        DatasetKind::Moons => {
            let t = rng.gen_range(0.0..PI);
            let (bx, by) = if rng.gen_bool(0.5) {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 1.0 - t.sin() - 0.5)
            };
            out[0] = (bx + MOONS_NOISE * normal(rng)) * MOONS_SCALE + MOONS_SHIFT[0];
            out[1] = (by + MOONS_NOISE * normal(rng)) * MOONS_SCALE + MOONS_SHIFT[1];
        }
        DatasetKind::Tabular => unreachable!("tabular kind has no generator"),
    }
}

fn read_numeric_csv(path: &Path) -> Result<(Vec<f64>, usize)> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut data = Vec::new();
    let mut d = 0usize;
    let mut seen_rows = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(values) => {
                if seen_rows == 0 {
                    d = values.len();
                } else if values.len() != d {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        message: format!("expected {d} columns, found {}", values.len()),
                    });
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        message: "non-finite value".into(),
                    });
                }
                data.extend(values);
                seen_rows += 1;
            }
            Err(e) => {
                // a non-numeric first row is treated as a header
                if seen_rows == 0 && lineno == 0 {
                    continue;
                }
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: e.to_string(),
                });
            }
        }
    }
    if seen_rows == 0 {
        return Err(Error::Parse {
            line: 0,
            message: "no data rows".into(),
        });
    }
    Ok((data, d))
}

/// Per-column standardization statistics from a training split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Load a numeric CSV (optional header), shuffle deterministically, split into
/// train/val/test, and optionally standardize every split with the training
/// split's per-column mean and standard deviation.
pub fn load_tabular(
    path: &Path,
    standardize: bool,
    split: (f64, f64, f64),
    seed: u64,
) -> Result<(SampleMatrix, SampleMatrix, SampleMatrix)> {
    let (f1, f2, f3) = split;
    if !(f1 > 0.0 && f2 >= 0.0 && f3 >= 0.0) || (f1 + f2 + f3 - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("split fractions must be nonnegative and sum to 1"));
    }
    let (flat, d) = read_numeric_csv(path)?;
    let n = flat.len() / d;
    let base = SampleMatrix::from_flat(
        n,
        d,
        flat,
        Provenance::new(format!("tabular:{}", path.display()), seed),
    )?;

    let mut idx: Vec<usize> = (0..n).collect();
    shuffle(&mut idx, &mut stream(seed, 0x5348_5546));
    let n1 = (n as f64 * f1).floor() as usize;
    let n2 = (n as f64 * f2).floor() as usize;
    if n1 == 0 || n1 + n2 >= n {
        return Err(Error::invalid(format!(
            "{n} rows are too few to split into fractions {split:?}"
        )));
    }
    let mut train = base.select(&idx[..n1], "train");
    let mut val = base.select(&idx[n1..n1 + n2], "val");
    let mut test = base.select(&idx[n1 + n2..], "test");

    if standardize {
        let stats = column_stats(&train)?;
        for m in [&mut train, &mut val, &mut test] {
            apply_standardize(m, &stats);
        }
    }
    Ok((train, val, test))
}

fn column_stats(m: &SampleMatrix) -> Result<ColumnStats> {
    let (n, d) = (m.n(), m.d());
    let mut mean = vec![0.0; d];
    for row in m.rows() {
        for (a, v) in mean.iter_mut().zip(row) {
            *a += v;
        }
    }
    for a in &mut mean {
        *a /= n as f64;
    }
    let mut var = vec![0.0; d];
    for row in m.rows() {
        for j in 0..d {
            let dv = row[j] - mean[j];
            var[j] += dv * dv;
        }
    }
    let mut std = vec![0.0; d];
    for j in 0..d {
        let v = var[j] / n as f64;
        if v <= 0.0 {
            return Err(Error::invalid(format!(
                "column {j} has zero variance; cannot standardize"
            )));
        }
        std[j] = v.sqrt();
    }
    Ok(ColumnStats { mean, std })
}

fn apply_standardize(m: &mut SampleMatrix, stats: &ColumnStats) {
    let d = m.d;
    for (i, v) in m.data.iter_mut().enumerate() {
        let j = i % d;
        *v = (*v - stats.mean[j]) / stats.std[j];
    }
}
