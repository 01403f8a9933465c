//! Full-reference evaluation: identity similarity, pose and expression error,
//! SSIM, PSNR, a perceptual distance, FID, and temporal perceptual variation.
//!
//! Frame-level metrics average over time; FID pools every test frame.

pub mod backends;
pub mod fid;
mod report;

pub use backends::{
    embedding_backend, feature_backend, ChromaMomentLandmarks, ChromaMomentPose, EmbeddingBackend,
    ExternalFeatures, FeatureBackend, HistogramEmbedding, LandmarkBackend, PoseBackend, PoseEstimate,
    ProjectionFeatures,
};
pub use fid::{fid_from_features, fid_from_stats, FeatureStats};
pub use report::{evaluate, Backends, EvalCase, EvalConfig, MetricReport, MetricRow};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::filter;
use crate::media::{Frame, LandmarkSet, VideoClip};

pub const DEFAULT_PSNR_CAP: f64 = 100.0;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Mean per-frame cosine similarity of identity embeddings.
pub fn id_similarity(gen: &VideoClip, gt: &VideoClip, backend: &dyn EmbeddingBackend) -> Result<f64> {
    if gen.len() != gt.len() {
        return Err(Error::shape(format!(
            "id_similarity: {} generated frames vs {} ground-truth frames",
            gen.len(),
            gt.len()
        )));
    }
    let mut total = 0.0;
    for (a, b) in gen.frames().iter().zip(gt.frames()) {
        let (ea, eb) = (backend.embed(a)?, backend.embed(b)?);
        if ea.len() != eb.len() {
            return Err(Error::shape("embedding dimensions differ"));
        }
        total += cosine(&ea, &eb);
    }
    Ok(total / gen.len() as f64)
}

/// Difference of two angles in degrees, wrapped into `[-180, 180]`.
pub fn wrap_degrees(d: f64) -> f64 {
    let w = (d + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 && d > 0.0 {
        180.0
    } else {
        w
    }
}

/// Mean absolute Euler-angle error over frames and the three angles.
pub fn pose_mae(gen: &[PoseEstimate], gt: &[PoseEstimate]) -> Result<f64> {
    if gen.len() != gt.len() || gen.is_empty() {
        return Err(Error::shape(format!(
            "pose_mae: {} vs {} poses",
            gen.len(),
            gt.len()
        )));
    }
    let total: f64 = gen
        .iter()
        .zip(gt)
        .map(|(a, b)| {
            wrap_degrees(a.yaw - b.yaw).abs()
                + wrap_degrees(a.pitch - b.pitch).abs()
                + wrap_degrees(a.roll - b.roll).abs()
        })
        .sum();
    Ok(total / (3.0 * gen.len() as f64))
}

/// Length that landmark errors are divided by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NmeNormalization {
    /// Distance between two ground-truth eye landmarks.
    InterOcular { left: usize, right: usize },
    /// Diagonal of the ground-truth bounding box.
    #[default]
    BoundingBox,
}

impl NmeNormalization {
    fn length(&self, gt: &LandmarkSet) -> Result<f64> {
        match *self {
            NmeNormalization::InterOcular { left, right } => {
                let (Some(a), Some(b)) = (gt.points.get(left), gt.points.get(right)) else {
                    return Err(Error::invalid(format!(
                        "eye indices ({left}, {right}) out of range for {} points",
                        gt.len()
                    )));
                };
                Ok(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
            }
            NmeNormalization::BoundingBox => {
                let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
                for p in &gt.points {
                    for k in 0..2 {
                        lo[k] = lo[k].min(p[k]);
                        hi[k] = hi[k].max(p[k]);
                    }
                }
                Ok(((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt())
            }
        }
    }
}

/// Per-frame mean landmark distance over the normalization length, averaged
/// over frames. Frames with a degenerate normalization length are skipped.
pub fn landmark_nme(gen: &[LandmarkSet], gt: &[LandmarkSet], norm: NmeNormalization) -> Result<f64> {
    if gen.len() != gt.len() || gen.is_empty() {
        return Err(Error::shape(format!(
            "landmark_nme: {} vs {} frames",
            gen.len(),
            gt.len()
        )));
    }
    let mut total = 0.0;
    let mut used = 0usize;
    for (a, b) in gen.iter().zip(gt) {
        if a.len() != b.len() || a.is_empty() {
            return Err(Error::shape(format!(
                "landmark_nme: frame {} has {} vs {} points",
                b.frame_index,
                a.len(),
                b.len()
            )));
        }
        let len = norm.length(b)?;
        if !(len > 1e-12) {
            log::warn!("landmark_nme: degenerate normalization length at frame {}, skipped", b.frame_index);
            continue;
        }
        let mean_dist: f64 = a
            .points
            .iter()
            .zip(&b.points)
            .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
            .sum::<f64>()
            / a.len() as f64;
        total += mean_dist / len;
        used += 1;
    }
    if used == 0 {
        return Err(Error::invalid("landmark_nme: every frame has a degenerate normalization length"));
    }
    Ok(total / used as f64)
}

fn check_same_size(a: &Frame, b: &Frame, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

const SSIM_SIGMA: f64 = 1.5;
const SSIM_RADIUS: usize = 5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Gaussian-weighted window statistic at every position where the window fits.
fn valid_filter(map: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let r = taps.len() / 2;
    let (h, w) = map.dim();
    let (oh, ow) = (h - 2 * r, w - 2 * r);
    let mut rows = Array2::<f64>::zeros((h, ow));
    for y in 0..h {
        for x in 0..ow {
            rows[[y, x]] = taps.iter().enumerate().map(|(k, t)| t * map[[y, x + k]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            out[[y, x]] = taps.iter().enumerate().map(|(k, t)| t * rows[[y + k, x]]).sum();
        }
    }
    out
}

/// SSIM with an 11x11 Gaussian window (sigma 1.5) on the `[0, 1]` range,
/// averaged over channels. Frames narrower than 11 pixels use the largest
/// odd window that fits.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    check_same_size(a, b, "ssim")?;
    let (h, w) = a.shape();
    let radius = SSIM_RADIUS.min((h.min(w) - 1) / 2);
    let taps = filter::gaussian_kernel(SSIM_SIGMA, radius);
    let mut total = 0.0;
    for c in 0..3 {
        let x = a.channel(c).mapv(f64::from);
        let y = b.channel(c).mapv(f64::from);
        let mx = valid_filter(&x, &taps);
        let my = valid_filter(&y, &taps);
        let sxx = valid_filter(&(&x * &x), &taps) - &mx * &mx;
        let syy = valid_filter(&(&y * &y), &taps) - &my * &my;
        let sxy = valid_filter(&(&x * &y), &taps) - &mx * &my;
        let map = ndarray::Zip::from(&mx)
            .and(&my)
            .and(&sxx)
            .and(&syy)
            .and(&sxy)
            .map_collect(|&mx, &my, &sxx, &syy, &sxy| {
                ((2.0 * mx * my + SSIM_C1) * (2.0 * sxy + SSIM_C2))
                    / ((mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2))
            });
        total += map.mean().expect("non-empty map");
    }
    Ok((total / 3.0).clamp(-1.0, 1.0))
}

pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    check_same_size(a, b, "mse")?;
    let n = a.pixels().len() as f64;
    Ok(a
        .pixels()
        .iter()
        .zip(b.pixels().iter())
        .map(|(&x, &y)| f64::from(x - y).powi(2))
        .sum::<f64>()
        / n)
}

/// `10 log10(1 / MSE)` on the unit range; `cap` when the frames are identical.
pub fn psnr(a: &Frame, b: &Frame, cap: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(cap);
    }
    Ok(10.0 * (1.0 / m).log10())
}

/// L2 distance between backend features, divided by the square root of the
/// feature dimension.
pub fn perceptual_distance(a: &Frame, b: &Frame, backend: &dyn FeatureBackend) -> Result<f64> {
    check_same_size(a, b, "perceptual_distance")?;
    let (fa, fb) = (backend.features(a)?, backend.features(b)?);
    Ok(feature_distance(&fa, &fb))
}

pub(crate) fn feature_distance(fa: &[f64], fb: &[f64]) -> f64 {
    let sq: f64 = fa.iter().zip(fb).map(|(x, y)| (x - y).powi(2)).sum();
    (sq / fa.len().max(1) as f64).sqrt()
}

/// Mean perceptual distance between adjacent frames.
pub fn tlpips(clip: &VideoClip, backend: &dyn FeatureBackend) -> Result<f64> {
    if clip.len() < 2 {
        return Err(Error::invalid("tLPIPS needs at least two frames"));
    }
    let feats = backend.features_batch(clip.frames())?;
    Ok(tlpips_from_features(&feats))
}

pub(crate) fn tlpips_from_features(feats: &[Vec<f64>]) -> f64 {
    let total: f64 = feats.windows(2).map(|p| feature_distance(&p[0], &p[1])).sum();
    total / (feats.len() - 1) as f64
}

/// FID between two frame collections.
pub fn fid(set_a: &[Frame], set_b: &[Frame], backend: &dyn FeatureBackend) -> Result<f64> {
    if set_a.is_empty() || set_b.is_empty() {
        return Err(Error::invalid("FID needs non-empty frame sets"));
    }
    let fa = backend.features_batch(set_a)?;
    let fb = backend.features_batch(set_b)?;
    fid_from_features(&fa, &fb)
}
