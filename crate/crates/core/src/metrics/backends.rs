//! Pluggable model backends and their built-in stand-ins.
//!
//! The built-ins need no downloaded weights:
//!
//! * [`HistogramEmbedding`]: normalized multi-scale color and gradient histograms.
//! * [`ProjectionFeatures`]: a fixed random orthogonal projection of downsampled pixels.
//! * [`ChromaMomentLandmarks`] / [`ChromaMomentPose`]: geometry of the saturated
//!   (non-neutral) region of a frame, which is where the synthetic heads live.
//!
//! External models plug in through [`ExternalFeatures`], which runs a program
//! speaking the frame streaming format documented on [`encode_frame_line`].

use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};

use nalgebra::{DMatrix, Matrix2, SymmetricEigen};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::media::{resize_area, Frame, LandmarkSet};

/// Maps a frame to a unit-norm identity embedding.
pub trait EmbeddingBackend: Send + Sync {
    fn name(&self) -> &str;
    fn embed(&self, frame: &Frame) -> Result<Vec<f64>>;
}

/// Maps a frame to a perceptual feature vector of fixed dimension.
pub trait FeatureBackend: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn features(&self, frame: &Frame) -> Result<Vec<f64>>;

    fn features_batch(&self, frames: &[Frame]) -> Result<Vec<Vec<f64>>> {
        frames.iter().map(|f| self.features(f)).collect()
    }
}

pub trait LandmarkBackend: Send + Sync {
    fn name(&self) -> &str;
    fn detect(&self, frame: &Frame, frame_index: usize) -> Result<LandmarkSet>;
}

/// Head orientation in degrees.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PoseEstimate {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl PoseEstimate {
    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Result<Self> {
        for v in [yaw, pitch, roll] {
            if !(-180.0..=180.0).contains(&v) {
                return Err(Error::invalid(format!("angle {v} outside [-180, 180]")));
            }
        }
        Ok(Self { yaw, pitch, roll })
    }
}

pub trait PoseBackend: Send + Sync {
    fn name(&self) -> &str;
    fn estimate(&self, frame: &Frame) -> Result<PoseEstimate>;
}

fn l2_normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    } else if let Some(first) = v.first_mut() {
        *first = 1.0;
    }
    v
}

/// Color histogram (4 levels per channel) plus 8-bin gradient orientation
/// histogram at full and half resolution.
#[derive(Debug, Clone, Default)]
pub struct HistogramEmbedding;

impl HistogramEmbedding {
    const LEVELS: usize = 4;
    const ORIENTATIONS: usize = 8;

    fn scale_histograms(channels: &[Array2<f32>; 3], out: &mut Vec<f64>) {
        let (h, w) = channels[0].dim();
        let n = (h * w) as f64;
        let mut color = vec![0.0; Self::LEVELS.pow(3)];
        for y in 0..h {
            for x in 0..w {
                let q = |c: usize| ((channels[c][[y, x]] * Self::LEVELS as f32) as usize).min(Self::LEVELS - 1);
                color[q(0) * Self::LEVELS * Self::LEVELS + q(1) * Self::LEVELS + q(2)] += 1.0 / n;
            }
        }
        let luma = |y: usize, x: usize| {
            f64::from(0.299 * channels[0][[y, x]] + 0.587 * channels[1][[y, x]] + 0.114 * channels[2][[y, x]])
        };
        let mut grad = vec![0.0; Self::ORIENTATIONS];
        for y in 1..h.saturating_sub(1) {
            for x in 1..w.saturating_sub(1) {
                let gx = luma(y, x + 1) - luma(y, x - 1);
                let gy = luma(y + 1, x) - luma(y - 1, x);
                let mag = (gx * gx + gy * gy).sqrt();
                if mag > 0.0 {
                    let angle = gy.atan2(gx).rem_euclid(std::f64::consts::PI);
                    let bin = ((angle / std::f64::consts::PI * Self::ORIENTATIONS as f64) as usize)
                        .min(Self::ORIENTATIONS - 1);
                    grad[bin] += mag / n;
                }
            }
        }
        out.extend(color);
        out.extend(grad);
    }
}

impl EmbeddingBackend for HistogramEmbedding {
    fn name(&self) -> &str {
        "histogram"
    }

    fn embed(&self, frame: &Frame) -> Result<Vec<f64>> {
        let full = [0, 1, 2].map(|c| frame.channel(c).to_owned());
        let (h, w) = frame.shape();
        let half = [0, 1, 2].map(|c| {
            resize_area(full[c].view(), (h / 2).max(1), (w / 2).max(1)).expect("positive size")
        });
        let mut v = Vec::new();
        Self::scale_histograms(&full, &mut v);
        Self::scale_histograms(&half, &mut v);
        Ok(l2_normalize(v))
    }
}

/// Fixed random orthogonal projection of an area-downsampled frame.
#[derive(Debug, Clone)]
pub struct ProjectionFeatures {
    grid: usize,
    /// `dim x (grid * grid * 3)` with orthonormal rows.
    basis: DMatrix<f64>,
}

impl ProjectionFeatures {
    pub const DEFAULT_DIM: usize = 16;
    pub const DEFAULT_GRID: usize = 8;
    const SEED: u64 = 0x5eed_f00d;

    pub fn new(dim: usize, grid: usize) -> Result<Self> {
        let input = grid * grid * 3;
        if dim == 0 || grid == 0 || dim > input {
            return Err(Error::invalid(format!(
                "projection dim {dim} must be in [1, {input}] for a {grid}x{grid} grid"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(Self::SEED);
        let gauss = DMatrix::<f64>::from_fn(input, dim, |_, _| StandardNormal.sample(&mut rng));
        let q = gauss.qr().q();
        Ok(Self {
            grid,
            basis: q.transpose(),
        })
    }

    fn downsample(&self, frame: &Frame) -> nalgebra::DVector<f64> {
        let mut v = Vec::with_capacity(self.grid * self.grid * 3);
        for c in 0..3 {
            let small = resize_area(frame.channel(c), self.grid, self.grid).expect("positive grid");
            v.extend(small.iter().map(|&x| f64::from(x)));
        }
        nalgebra::DVector::from_vec(v)
    }
}

impl Default for ProjectionFeatures {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM, Self::DEFAULT_GRID).expect("default projection is valid")
    }
}

impl FeatureBackend for ProjectionFeatures {
    fn name(&self) -> &str {
        "projection"
    }

    fn dim(&self) -> usize {
        self.basis.nrows()
    }

    fn features(&self, frame: &Frame) -> Result<Vec<f64>> {
        Ok((&self.basis * self.downsample(frame)).iter().copied().collect())
    }
}

/// Weighted second-moment geometry of a frame's saturated region.
#[derive(Debug, Clone, Copy)]
struct ChromaMoments {
    mass: f64,
    centroid: [f64; 2],
    /// Principal axis, pointing up (negative y).
    major: [f64; 2],
    minor: [f64; 2],
    major_var: f64,
    minor_var: f64,
    skew_major: f64,
    skew_minor: f64,
    upper: [f64; 2],
    lower: [f64; 2],
}

/// Chroma (max - min channel) below this counts as neutral background.
const CHROMA_FLOOR: f32 = 0.1;

fn saliency(frame: &Frame) -> Array2<f64> {
    let px = frame.pixels();
    let (h, w) = frame.shape();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (r, g, b) = (px[[y, x, 0]], px[[y, x, 1]], px[[y, x, 2]]);
        let chroma = r.max(g).max(b) - r.min(g).min(b);
        f64::from((chroma - CHROMA_FLOOR).max(0.0))
    })
}

fn chroma_moments(frame: &Frame) -> Option<ChromaMoments> {
    let s = saliency(frame);
    let mass: f64 = s.sum();
    if mass < 1e-9 {
        return None;
    }
    let mut c = [0.0; 2];
    for ((y, x), &v) in s.indexed_iter() {
        c[0] += v * (x as f64 + 0.5);
        c[1] += v * (y as f64 + 0.5);
    }
    c[0] /= mass;
    c[1] /= mass;
    let mut cov = [0.0; 3];
    for ((y, x), &v) in s.indexed_iter() {
        let dx = x as f64 + 0.5 - c[0];
        let dy = y as f64 + 0.5 - c[1];
        cov[0] += v * dx * dx;
        cov[1] += v * dx * dy;
        cov[2] += v * dy * dy;
    }
    cov.iter_mut().for_each(|v| *v /= mass);
    let eig = SymmetricEigen::new(Matrix2::new(cov[0], cov[1], cov[1], cov[2]));
    let (i_major, i_minor) = if eig.eigenvalues[0] >= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    let mut major = [eig.eigenvectors[(0, i_major)], eig.eigenvectors[(1, i_major)]];
    if major[1] > 0.0 || (major[1] == 0.0 && major[0] < 0.0) {
        major = [-major[0], -major[1]];
    }
    let minor = [-major[1], major[0]];
    let major_var = eig.eigenvalues[i_major].max(0.0);
    let minor_var = eig.eigenvalues[i_minor].max(0.0);

    let (mut skew_major, mut skew_minor) = (0.0, 0.0);
    let (mut upper, mut upper_mass, mut lower, mut lower_mass) = ([0.0; 2], 0.0, [0.0; 2], 0.0);
    for ((y, x), &v) in s.indexed_iter() {
        let p = [x as f64 + 0.5, y as f64 + 0.5];
        let d = [p[0] - c[0], p[1] - c[1]];
        let along = d[0] * major[0] + d[1] * major[1];
        let across = d[0] * minor[0] + d[1] * minor[1];
        skew_major += v * along.powi(3);
        skew_minor += v * across.powi(3);
        if along >= 0.0 {
            upper[0] += v * p[0];
            upper[1] += v * p[1];
            upper_mass += v;
        } else {
            lower[0] += v * p[0];
            lower[1] += v * p[1];
            lower_mass += v;
        }
    }
    let norm = |m: f64, var: f64| if var > 1e-12 { m / (mass * var.powf(1.5)) } else { 0.0 };
    skew_major = norm(skew_major, major_var);
    skew_minor = norm(skew_minor, minor_var);
    let fin = |acc: [f64; 2], m: f64| if m > 0.0 { [acc[0] / m, acc[1] / m] } else { c };
    Some(ChromaMoments {
        mass,
        centroid: c,
        major,
        minor,
        major_var,
        minor_var,
        skew_major,
        skew_minor,
        upper: fin(upper, upper_mass),
        lower: fin(lower, lower_mass),
    })
}

/// Seven points from the saturated region: centroid, the four ends of the
/// two principal axes at two standard deviations (marked as boundary), and
/// the centroids of the upper and lower halves along the major axis.
#[derive(Debug, Clone, Default)]
pub struct ChromaMomentLandmarks;

impl ChromaMomentLandmarks {
    pub const POINTS: usize = 7;
    pub const BOUNDARY: [usize; 4] = [1, 2, 3, 4];
}

impl LandmarkBackend for ChromaMomentLandmarks {
    fn name(&self) -> &str {
        "chroma-moments"
    }

    fn detect(&self, frame: &Frame, frame_index: usize) -> Result<LandmarkSet> {
        let (h, w) = frame.shape();
        let points = match chroma_moments(frame) {
            None => vec![[w as f64 / 2.0, h as f64 / 2.0]; Self::POINTS],
            Some(m) => {
                debug_assert!(m.mass > 0.0);
                let c = m.centroid;
                let a = 2.0 * m.major_var.sqrt();
                let b = 2.0 * m.minor_var.sqrt();
                vec![
                    c,
                    [c[0] + a * m.major[0], c[1] + a * m.major[1]],
                    [c[0] - a * m.major[0], c[1] - a * m.major[1]],
                    [c[0] + b * m.minor[0], c[1] + b * m.minor[1]],
                    [c[0] - b * m.minor[0], c[1] - b * m.minor[1]],
                    m.upper,
                    m.lower,
                ]
            }
        };
        Ok(LandmarkSet::new(points, frame_index, Self::BOUNDARY.to_vec())?.clamped(h, w))
    }
}

/// Roll from the principal-axis tilt; yaw and pitch from third-moment skew.
#[derive(Debug, Clone, Default)]
pub struct ChromaMomentPose;

impl PoseBackend for ChromaMomentPose {
    fn name(&self) -> &str {
        "chroma-moments"
    }

    fn estimate(&self, frame: &Frame) -> Result<PoseEstimate> {
        let Some(m) = chroma_moments(frame) else {
            return PoseEstimate::new(0.0, 0.0, 0.0);
        };
        let roll = m.major[0].atan2(-m.major[1]).to_degrees();
        let yaw = (30.0 * m.skew_minor).clamp(-90.0, 90.0);
        let pitch = (30.0 * m.skew_major).clamp(-90.0, 90.0);
        PoseEstimate::new(yaw, pitch, roll.clamp(-180.0, 180.0))
    }
}

/// One line of the adapter streaming format: `<height> <width>` followed by
/// `height * width * 3` intensities in `[0, 1]`, row-major, channels RGB,
/// all separated by single spaces. The adapter answers each input line with
/// one line of whitespace-separated floats.
pub fn encode_frame_line(frame: &Frame) -> String {
    let (h, w) = frame.shape();
    let mut line = format!("{h} {w}");
    for v in frame.pixels().iter() {
        line.push(' ');
        line.push_str(&v.to_string());
    }
    line
}

/// Feature or embedding backend backed by an external executable.
#[derive(Debug, Clone)]
pub struct ExternalFeatures {
    name: String,
    program: String,
    args: Vec<String>,
    dim: usize,
    unit_norm: bool,
}

impl ExternalFeatures {
    pub fn new(name: impl Into<String>, program: impl Into<String>, args: Vec<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            program: program.into(),
            args,
            dim,
            unit_norm: false,
        }
    }

    /// Normalizes each returned vector, for use as an identity embedding.
    pub fn normalized(mut self) -> Self {
        self.unit_norm = true;
        self
    }

    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Backend {
            name: self.name.clone(),
            reason: reason.into(),
        }
    }

    fn run(&self, frames: &[Frame]) -> Result<Vec<Vec<f64>>> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| self.fail(format!("spawning `{}`: {e}", self.program)))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let payload: String = frames.iter().map(|f| encode_frame_line(f) + "\n").collect();
        let writer = std::thread::spawn(move || stdin.write_all(payload.as_bytes()));
        let reader = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut out = Vec::with_capacity(frames.len());
        for line in reader.lines() {
            let line = line.map_err(|e| self.fail(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let v = line
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| self.fail(format!("unparseable output `{line}`: {e}")))?;
            if v.len() != self.dim || v.iter().any(|x| !x.is_finite()) {
                return Err(self.fail(format!("expected {} finite values, got `{line}`", self.dim)));
            }
            out.push(if self.unit_norm { l2_normalize(v) } else { v });
        }
        writer
            .join()
            .expect("writer thread")
            .map_err(|e| self.fail(format!("writing frames: {e}")))?;
        let status = child.wait().map_err(|e| self.fail(e.to_string()))?;
        if !status.success() {
            return Err(self.fail(format!("exited with {status}")));
        }
        if out.len() != frames.len() {
            return Err(self.fail(format!("{} outputs for {} frames", out.len(), frames.len())));
        }
        Ok(out)
    }
}

impl FeatureBackend for ExternalFeatures {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn features(&self, frame: &Frame) -> Result<Vec<f64>> {
        Ok(self.run(std::slice::from_ref(frame))?.remove(0))
    }

    fn features_batch(&self, frames: &[Frame]) -> Result<Vec<Vec<f64>>> {
        self.run(frames)
    }
}

impl EmbeddingBackend for ExternalFeatures {
    fn name(&self) -> &str {
        &self.name
    }

    fn embed(&self, frame: &Frame) -> Result<Vec<f64>> {
        let v = self.run(std::slice::from_ref(frame))?.remove(0);
        Ok(l2_normalize(v))
    }
}

/// Parses `exec:<dim>:<program> [args...]` into an external backend.
fn parse_exec(spec: &str, name: &str) -> Result<Option<ExternalFeatures>> {
    let Some(rest) = spec.strip_prefix("exec:") else {
        return Ok(None);
    };
    let (dim, cmd) = rest
        .split_once(':')
        .ok_or_else(|| Error::invalid(format!("`{spec}`: expected exec:<dim>:<program> [args]")))?;
    let dim: usize = dim
        .parse()
        .map_err(|_| Error::invalid(format!("`{spec}`: bad dimension `{dim}`")))?;
    let mut parts = cmd.split_whitespace().map(str::to_owned);
    let program = parts
        .next()
        .ok_or_else(|| Error::invalid(format!("`{spec}`: missing program")))?;
    Ok(Some(ExternalFeatures::new(name, program, parts.collect(), dim)))
}

/// Resolves a feature backend from its configuration value: `projection`,
/// `projection:<dim>` or `exec:<dim>:<program> [args]`.
pub fn feature_backend(spec: &str) -> Result<Box<dyn FeatureBackend>> {
    if let Some(ext) = parse_exec(spec, "external-features")? {
        return Ok(Box::new(ext));
    }
    match spec.split_once(':') {
        None if spec == "projection" => Ok(Box::new(ProjectionFeatures::default())),
        Some(("projection", dim)) => {
            let dim = dim
                .parse()
                .map_err(|_| Error::invalid(format!("bad projection dimension `{dim}`")))?;
            Ok(Box::new(ProjectionFeatures::new(dim, ProjectionFeatures::DEFAULT_GRID)?))
        }
        _ => Err(Error::invalid(format!(
            "unknown feature backend `{spec}` (expected projection, projection:<dim> or exec:<dim>:<program>)"
        ))),
    }
}

/// Resolves an embedding backend: `histogram` or `exec:<dim>:<program> [args]`.
pub fn embedding_backend(spec: &str) -> Result<Box<dyn EmbeddingBackend>> {
    if let Some(ext) = parse_exec(spec, "external-embedding")? {
        return Ok(Box::new(ext.normalized()));
    }
    match spec {
        "histogram" => Ok(Box::new(HistogramEmbedding)),
        _ => Err(Error::invalid(format!(
            "unknown embedding backend `{spec}` (expected histogram or exec:<dim>:<program>)"
        ))),
    }
}
