//! Synthetic 3-axis fan vibration.
//!
//! Three operating modes are simulated at a 119 Hz sample rate: a normal
//! spinning fan, a stuck fan (blades blocked, no rotation fundamental), and
//! a tilted fan (imbalanced axes plus a half-rate wobble). Windows are
//! consecutive, non-overlapping 40-sample blocks; the phase of every sample
//! is derived from its global sample index, so a window is a pure function
//! of `(mode, seed, drift, index)`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::Preproc;
use crate::numeric::Rng;

pub const WINDOW_LEN: usize = 40;
pub const AXES: usize = 3;
pub const SAMPLE_RATE_HZ: f64 = 119.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FanMode {
    Normal,
    Stuck,
    Tilted,
}

impl FanMode {
    pub const ALL: [FanMode; 3] = [FanMode::Normal, FanMode::Stuck, FanMode::Tilted];

    pub fn index(self) -> usize {
        match self {
            FanMode::Normal => 0,
            FanMode::Stuck => 1,
            FanMode::Tilted => 2,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(FanMode::Normal),
            1 => Ok(FanMode::Stuck),
            2 => Ok(FanMode::Tilted),
            _ => Err(Error::Domain(format!("fan mode {i} is not one of 0, 1, 2"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FanMode::Normal => "normal",
            FanMode::Stuck => "stuck",
            FanMode::Tilted => "tilted",
        }
    }
}

/// One 40×3 block of raw accelerations (g units) with an optional class label.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamWindow {
    pub samples: [[f32; AXES]; WINDOW_LEN],
    pub label: Option<usize>,
    pub index: u64,
}

impl StreamWindow {
    pub fn new(samples: [[f32; AXES]; WINDOW_LEN], label: Option<usize>, index: u64) -> Result<Self> {
        if samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("window contains a non-finite sample".into()));
        }
        Ok(StreamWindow {
            samples,
            label,
            index,
        })
    }

    /// Builds a window from a flat row list, as read from a corpus file.
    pub fn from_rows(rows: &[[f32; AXES]], label: Option<usize>, index: u64) -> Result<Self> {
        if rows.len() != WINDOW_LEN {
            return Err(Error::Shape {
                context: "window rows",
                expected: WINDOW_LEN,
                actual: rows.len(),
            });
        }
        let mut samples = [[0.0; AXES]; WINDOW_LEN];
        samples.copy_from_slice(rows);
        StreamWindow::new(samples, label, index)
    }

    pub fn axis(&self, axis: usize) -> impl Iterator<Item = f32> + '_ {
        self.samples.iter().map(move |s| s[axis])
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }
}

/// Rigid-body repositioning of the sensor: rotation, gain and offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftConfig {
    /// Euler angles in degrees about x, y, z (applied x first).
    pub angles_deg: [f64; 3],
    pub gain: f64,
    pub offset: [f64; 3],
}

impl Default for DriftConfig {
    fn default() -> Self {
        DriftConfig {
            angles_deg: [5.0, 5.0, 5.0],
            gain: 1.05,
            offset: [0.02, 0.0, 0.0],
        }
    }
}

impl DriftConfig {
    pub fn identity() -> Self {
        DriftConfig {
            angles_deg: [0.0; 3],
            gain: 1.0,
            offset: [0.0; 3],
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == DriftConfig::identity()
    }

    /// `Rz · Ry · Rx`.
    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let [ax, ay, az] = self.angles_deg.map(f64::to_radians);
        let (sx, cx) = ax.sin_cos();
        let (sy, cy) = ay.sin_cos();
        let (sz, cz) = az.sin_cos();
        let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
        let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
        let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
        mat3_mul(&rz, &mat3_mul(&ry, &rx))
    }
}

fn mat3_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

impl FromStr for DriftConfig {
    type Err = Error;

    /// Parses `"rx,ry,rz,gain,ox,oy,oz"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Domain(format!("bad drift component {p:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        if parts.len() != 7 {
            return Err(Error::Shape {
                context: "drift string",
                expected: 7,
                actual: parts.len(),
            });
        }
        if !(parts[3] > 0.0) {
            return Err(Error::Domain("drift gain must be positive".into()));
        }
        Ok(DriftConfig {
            angles_deg: [parts[0], parts[1], parts[2]],
            gain: parts[3],
            offset: [parts[4], parts[5], parts[6]],
        })
    }
}

impl fmt::Display for DriftConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [rx, ry, rz] = self.angles_deg;
        let [ox, oy, oz] = self.offset;
        write!(f, "{rx},{ry},{rz},{},{ox},{oy},{oz}", self.gain)
    }
}

/// Maps every sample to `gain · R · sample + offset`.
pub fn apply_drift(window: &StreamWindow, drift: &DriftConfig) -> StreamWindow {
    if drift.is_identity() {
        return window.clone();
    }
    let r = drift.rotation();
    let mut out = window.clone();
    for s in out.samples.iter_mut() {
        let v = s.map(f64::from);
        for (i, row) in r.iter().enumerate() {
            let rotated = row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
            s[i] = (drift.gain * rotated + drift.offset[i]) as f32;
        }
    }
    out
}

/// Waveform parameters for the three modes.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalParams {
    pub sample_rate_hz: f64,
    pub fundamental_hz: f64,
    pub normal_amplitude: [f64; 3],
    pub normal_noise: f64,
    pub stuck_offset: [f64; 3],
    pub stuck_noise: f64,
    pub tilted_amplitude: [f64; 3],
    /// Wobble amplitude relative to the fundamental, at half the fundamental frequency.
    pub tilted_wobble: f64,
    pub tilted_noise: f64,
}

impl Default for SignalParams {
    fn default() -> Self {
        SignalParams {
            sample_rate_hz: SAMPLE_RATE_HZ,
            fundamental_hz: 20.0,
            normal_amplitude: [0.3, 0.2, 0.1],
            normal_noise: 0.02,
            stuck_offset: [0.15, -0.10, 0.05],
            stuck_noise: 0.05,
            tilted_amplitude: [0.5, 0.1, 0.4],
            tilted_wobble: 0.5,
            tilted_noise: 0.03,
        }
    }
}

impl SignalParams {
    pub fn noise_free() -> Self {
        SignalParams {
            normal_noise: 0.0,
            stuck_noise: 0.0,
            tilted_noise: 0.0,
            ..SignalParams::default()
        }
    }
}

/// Generates the window at position `index` of a stream in `mode`.
pub fn generate_window(
    params: &SignalParams,
    mode: FanMode,
    index: u64,
    rng: &mut Rng,
    drift: Option<&DriftConfig>,
) -> StreamWindow {
    let mut samples = [[0.0f32; AXES]; WINDOW_LEN];
    let omega = std::f64::consts::TAU * params.fundamental_hz / params.sample_rate_hz;
    for (i, sample) in samples.iter_mut().enumerate() {
        let n = (index * WINDOW_LEN as u64 + i as u64) as f64;
        let fundamental = (omega * n).sin();
        let wobble = (0.5 * omega * n).sin();
        for (axis, out) in sample.iter_mut().enumerate() {
            let v = match mode {
                FanMode::Normal => {
                    params.normal_amplitude[axis] * fundamental
                        + rng.normal(0.0, params.normal_noise)
                }
                FanMode::Stuck => params.stuck_offset[axis] + rng.normal(0.0, params.stuck_noise),
                FanMode::Tilted => {
                    params.tilted_amplitude[axis] * (fundamental + params.tilted_wobble * wobble)
                        + rng.normal(0.0, params.tilted_noise)
                }
            };
            *out = v as f32;
        }
    }
    let window = StreamWindow {
        samples,
        label: Some(mode.index()),
        index,
    };
    match drift {
        Some(d) => apply_drift(&window, d),
        None => window,
    }
}

/// Endless stream of consecutive windows in one mode.
#[derive(Debug, Clone)]
pub struct FanStream {
    params: SignalParams,
    mode: FanMode,
    rng: Rng,
    drift: Option<DriftConfig>,
    next_index: u64,
}

impl FanStream {
    pub fn new(params: SignalParams, mode: FanMode, rng: Rng, drift: Option<DriftConfig>) -> Self {
        FanStream {
            params,
            mode,
            rng,
            drift,
            next_index: 0,
        }
    }

    pub fn starting_at(mut self, index: u64) -> Self {
        self.next_index = index;
        self
    }

    pub fn mode(&self) -> FanMode {
        self.mode
    }
}

impl Iterator for FanStream {
    type Item = StreamWindow;

    fn next(&mut self) -> Option<StreamWindow> {
        let w = generate_window(
            &self.params,
            self.mode,
            self.next_index,
            &mut self.rng,
            self.drift.as_ref(),
        );
        self.next_index += 1;
        Some(w)
    }
}

const POWER_ITERATIONS: usize = 100;
const POWER_TOL: f64 = 1e-10;

/// Fits the PCA projection and percentile min-max bounds on a corpus.
pub fn fit_preproc(corpus: &[StreamWindow]) -> Result<Preproc> {
    if corpus.len() < 100 {
        return Err(Error::Fit(format!(
            "need at least 100 windows to fit preprocessing, got {}",
            corpus.len()
        )));
    }
    let samples = || corpus.iter().flat_map(|w| w.samples.iter());
    let count = (corpus.len() * WINDOW_LEN) as f64;

    let mut mean = [0.0f64; 3];
    for s in samples() {
        for a in 0..3 {
            mean[a] += f64::from(s[a]);
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);

    let mut cov = [[0.0f64; 3]; 3];
    for s in samples() {
        let d = [0, 1, 2].map(|a| f64::from(s[a]) - mean[a]);
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += d[i] * d[j];
            }
        }
    }
    cov.iter_mut().flatten().for_each(|c| *c /= count);

    let axis = top_eigenvector(&cov)?;
    let mean32 = mean.map(|m| m as f32);
    let axis32 = axis.map(|a| a as f32);

    let mut projected: Vec<f64> = samples()
        .map(|s| f64::from(project(&axis32, &mean32, s)))
        .collect();
    projected.sort_by(f64::total_cmp);
    let lo = percentile_sorted(&projected, 0.5) as f32;
    let hi = percentile_sorted(&projected, 99.5) as f32;
    Preproc::new(mean32, axis32, lo, hi)
}

pub(crate) fn project(axis: &[f32; 3], mean: &[f32; 3], s: &[f32; 3]) -> f32 {
    axis[0] * (s[0] - mean[0]) + axis[1] * (s[1] - mean[1]) + axis[2] * (s[2] - mean[2])
}

/// Unit top eigenvector of a symmetric PSD 3×3 matrix by power iteration,
/// signed so its largest-magnitude component is positive.
pub fn top_eigenvector(cov: &[[f64; 3]; 3]) -> Result<[f64; 3]> {
    let norm = |v: &[f64; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let trace = cov[0][0] + cov[1][1] + cov[2][2];
    if !(trace > 1e-12) {
        return Err(Error::Fit("covariance is degenerate (rank 0)".into()));
    }
    // Start from the column of largest norm; it always has weight on the top eigenvector.
    let start = (0..3)
        .map(|j| [cov[0][j], cov[1][j], cov[2][j]])
        .max_by(|a, b| norm(a).total_cmp(&norm(b)))
        .unwrap_or([1.0, 0.0, 0.0]);
    let n0 = norm(&start);
    let mut v = start.map(|x| x / n0);
    for _ in 0..POWER_ITERATIONS {
        let w = [0, 1, 2].map(|i| (0..3).map(|j| cov[i][j] * v[j]).sum::<f64>());
        let nw = norm(&w);
        if nw == 0.0 {
            break;
        }
        let next = w.map(|x| x / nw);
        let delta = norm(&[next[0] - v[0], next[1] - v[1], next[2] - v[2]]);
        v = next;
        if delta < POWER_TOL {
            break;
        }
    }
    let largest = (0..3)
        .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()))
        .unwrap_or(0);
    if v[largest] < 0.0 {
        v = v.map(|x| -x);
    }
    Ok(v)
}

/// Linear-interpolated percentile of an ascending slice.
pub fn percentile_sorted(sorted: &[f64], pct: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}
