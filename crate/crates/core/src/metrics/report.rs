use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backends::{EmbeddingBackend, FeatureBackend, LandmarkBackend, PoseBackend, PoseEstimate};
use super::fid::{fid_from_stats, FeatureStats};
use super::{
    feature_distance, id_similarity, landmark_nme, pose_mae, psnr, ssim, tlpips_from_features, NmeNormalization,
    DEFAULT_PSNR_CAP,
};
use crate::error::{Error, Result};
use crate::media::{LandmarkSet, VideoClip};

/// One generated clip, its ground truth, and optional precomputed tracks.
/// Missing tracks are produced by the landmark and pose backends.
#[derive(Debug, Clone)]
pub struct EvalCase {
    pub id: String,
    pub generated: VideoClip,
    pub ground_truth: VideoClip,
    pub gen_landmarks: Option<Vec<LandmarkSet>>,
    pub gt_landmarks: Option<Vec<LandmarkSet>>,
    pub gen_poses: Option<Vec<PoseEstimate>>,
    pub gt_poses: Option<Vec<PoseEstimate>>,
}

impl EvalCase {
    pub fn new(id: impl Into<String>, generated: VideoClip, ground_truth: VideoClip) -> Self {
        Self {
            id: id.into(),
            generated,
            ground_truth,
            gen_landmarks: None,
            gt_landmarks: None,
            gen_poses: None,
            gt_poses: None,
        }
    }
}

pub struct Backends {
    pub embedding: Box<dyn EmbeddingBackend>,
    pub features: Box<dyn FeatureBackend>,
    pub landmarks: Box<dyn LandmarkBackend>,
    pub pose: Box<dyn PoseBackend>,
}

impl Default for Backends {
    fn default() -> Self {
        Self {
            embedding: Box::new(super::HistogramEmbedding),
            features: Box::new(super::ProjectionFeatures::default()),
            landmarks: Box::new(super::ChromaMomentLandmarks),
            pose: Box::new(super::ChromaMomentPose),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub psnr_cap: f64,
    pub nme: NmeNormalization,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            psnr_cap: DEFAULT_PSNR_CAP,
            nme: NmeNormalization::BoundingBox,
        }
    }
}

/// The benchmark columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub sim_id: f64,
    pub pose_mae: f64,
    pub expr_nme: f64,
    pub ssim: f64,
    pub psnr: f64,
    pub lpips: f64,
    pub fid: f64,
    pub tlpips: f64,
}

impl MetricRow {
    fn values(&self) -> [f64; 8] {
        [
            self.sim_id,
            self.pose_mae,
            self.expr_nme,
            self.ssim,
            self.psnr,
            self.lpips,
            self.fid,
            self.tlpips,
        ]
    }

    /// Largest absolute column difference.
    pub fn max_abs_diff(&self, other: &MetricRow) -> f64 {
        self.values()
            .iter()
            .zip(other.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub id: String,
    #[serde(flatten)]
    pub row: MetricRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(flatten)]
    pub summary: MetricRow,
    pub per_clip: Vec<ClipMetrics>,
}

const HEADER: [&str; 8] = ["Sim_ID", "Pose", "Expr", "SSIM", "PSNR", "LPIPS", "FID", "tLPIPS"];

impl MetricReport {
    /// Plain-text table: one row per clip followed by the overall row.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<16}", "clip");
        for h in HEADER {
            write!(out, " {h:>9}").unwrap();
        }
        out.push('\n');
        let mut row = |name: &str, r: &MetricRow| {
            write!(out, "{name:<16}").unwrap();
            for v in r.values() {
                write!(out, " {v:>9.4}").unwrap();
            }
            out.push('\n');
        };
        for c in &self.per_clip {
            row(&c.id, &c.row);
        }
        row("overall", &self.summary);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

struct ClipOutcome {
    row: MetricRow,
    gen_stats: FeatureStats,
    gt_stats: FeatureStats,
}

fn landmarks_for(
    given: &Option<Vec<LandmarkSet>>,
    clip: &VideoClip,
    backend: &dyn LandmarkBackend,
) -> Result<Vec<LandmarkSet>> {
    match given {
        Some(track) if track.len() == clip.len() => Ok(track.clone()),
        Some(track) => Err(Error::shape(format!(
            "{} landmark sets for {} frames",
            track.len(),
            clip.len()
        ))),
        None => clip
            .frames()
            .iter()
            .enumerate()
            .map(|(i, f)| backend.detect(f, i))
            .collect(),
    }
}

fn poses_for(given: &Option<Vec<PoseEstimate>>, clip: &VideoClip, backend: &dyn PoseBackend) -> Result<Vec<PoseEstimate>> {
    match given {
        Some(p) => Ok(p.clone()),
        None => clip.frames().iter().map(|f| backend.estimate(f)).collect(),
    }
}

fn evaluate_case(case: &EvalCase, backends: &Backends, cfg: &EvalConfig) -> Result<ClipOutcome> {
    let (gen, gt) = (&case.generated, &case.ground_truth);
    gen.ensure_same_shape(gt, "generated vs ground truth")?;
    let n = gen.len() as f64;

    let sim_id = id_similarity(gen, gt, backends.embedding.as_ref())?;
    let pose = pose_mae(
        &poses_for(&case.gen_poses, gen, backends.pose.as_ref())?,
        &poses_for(&case.gt_poses, gt, backends.pose.as_ref())?,
    )?;
    let expr = landmark_nme(
        &landmarks_for(&case.gen_landmarks, gen, backends.landmarks.as_ref())?,
        &landmarks_for(&case.gt_landmarks, gt, backends.landmarks.as_ref())?,
        cfg.nme,
    )?;

    let (mut ssim_sum, mut psnr_sum) = (0.0, 0.0);
    for (a, b) in gen.frames().iter().zip(gt.frames()) {
        ssim_sum += ssim(a, b)?;
        psnr_sum += psnr(a, b, cfg.psnr_cap)?;
    }

    let gen_feats = backends.features.features_batch(gen.frames())?;
    let gt_feats = backends.features.features_batch(gt.frames())?;
    let lpips = gen_feats
        .iter()
        .zip(&gt_feats)
        .map(|(a, b)| feature_distance(a, b))
        .sum::<f64>()
        / n;
    let dim = backends.features.dim();
    let gen_stats = FeatureStats::from_features(dim, gen_feats.iter().map(Vec::as_slice))?;
    let gt_stats = FeatureStats::from_features(dim, gt_feats.iter().map(Vec::as_slice))?;

    let row = MetricRow {
        sim_id,
        pose_mae: pose,
        expr_nme: expr,
        ssim: ssim_sum / n,
        psnr: psnr_sum / n,
        lpips,
        fid: fid_from_stats(&gen_stats, &gt_stats)?,
        tlpips: tlpips_from_features(&gen_feats),
    };
    Ok(ClipOutcome {
        row,
        gen_stats,
        gt_stats,
    })
}

/// Evaluates every case. Scalar metrics average over frames within a clip and
/// then over clips; FID is computed once over the pooled frames of all clips.
pub fn evaluate(cases: &[EvalCase], backends: &Backends, cfg: &EvalConfig) -> Result<MetricReport> {
    if cases.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let outcomes = cases
        .par_iter()
        .map(|case| evaluate_case(case, backends, cfg).map_err(|e| e.in_clip(&case.id)))
        .collect::<Result<Vec<_>>>()?;

    let dim = backends.features.dim();
    let (mut gen_all, mut gt_all) = (FeatureStats::new(dim), FeatureStats::new(dim));
    for o in &outcomes {
        gen_all.merge(&o.gen_stats)?;
        gt_all.merge(&o.gt_stats)?;
    }
    let k = outcomes.len() as f64;
    let mean = |f: fn(&MetricRow) -> f64| outcomes.iter().map(|o| f(&o.row)).sum::<f64>() / k;
    let summary = MetricRow {
        sim_id: mean(|r| r.sim_id),
        pose_mae: mean(|r| r.pose_mae),
        expr_nme: mean(|r| r.expr_nme),
        ssim: mean(|r| r.ssim),
        psnr: mean(|r| r.psnr),
        lpips: mean(|r| r.lpips),
        fid: fid_from_stats(&gen_all, &gt_all)?,
        tlpips: mean(|r| r.tlpips),
    };
    Ok(MetricReport {
        summary,
        per_clip: cases
            .iter()
            .zip(outcomes)
            .map(|(c, o)| ClipMetrics {
                id: c.id.clone(),
                row: o.row,
            })
            .collect(),
    })
}
