//! Paired-data construction: alignment and realism gates, feathered head
//! compositing, tuple assembly and the procedural stand-in for the external
//! head editors.

pub mod dataset;
pub mod editor;
pub mod synth;

use ndarray::{Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{self, Border};
use crate::media::{to_grayscale, Frame, LandmarkSet, SegmentationMask, VideoClip};
use crate::metrics::{landmark_nme, NmeNormalization};

pub use dataset::{load_dataset, load_sample, save_dataset, save_sample, ManifestEntry};
pub use editor::{assemble_pair, AssemblyConfig, CommandEditor, EditedClip, HeadEditor};
pub use synth::{identity_oracle, synth_generate, IdentityVerdict, SynthConfig};

pub const DEFAULT_NME_THRESHOLD: f64 = 0.3;
pub const DEFAULT_REALISM_THRESHOLD: f64 = 0.7;
pub const DEFAULT_FEATHER_RADIUS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub nme: f64,
    pub threshold: f64,
    pub accepted: bool,
}

impl AlignmentReport {
    /// Accepts at equality.
    pub fn new(nme: f64, threshold: f64) -> Self {
        Self {
            nme,
            threshold,
            accepted: nme <= threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealismScore {
    pub p_real: f64,
    pub threshold: f64,
    pub accepted: bool,
}

impl RealismScore {
    /// Accepts at equality.
    pub fn new(p_real: f64, threshold: f64) -> Self {
        Self {
            p_real,
            threshold,
            accepted: p_real >= threshold,
        }
    }
}

/// Alignment gate between the original and edited landmark tracks. The
/// first track supplies the normalization length.
pub fn nme_alignment_filter(
    lms_a: &[LandmarkSet],
    lms_b: &[LandmarkSet],
    threshold: f64,
    norm: NmeNormalization,
) -> Result<AlignmentReport> {
    let nme = landmark_nme(lms_b, lms_a, norm)?;
    Ok(AlignmentReport::new(nme, threshold))
}

/// Binary mask blurred by a Gaussian of the given radius (sigma = radius / 3),
/// renormalized at the image border so constant masks stay exact.
pub fn feather(mask: &SegmentationMask, radius: usize) -> Array2<f32> {
    let binary = mask.alpha().mapv(|a| if a >= 0.5 { 1.0f64 } else { 0.0 });
    if radius == 0 {
        return binary.mapv(|v| v as f32);
    }
    let sigma = radius as f64 / 3.0;
    filter::gaussian_blur(&binary, sigma, radius, Border::Renormalize).mapv(|v| v as f32)
}

/// Per-pixel convex blend; equal sources pass through untouched.
#[inline]
pub fn blend(a: f32, b: f32, f: f32) -> f32 {
    if a == b {
        return a;
    }
    (f * b + (1.0 - f) * a).clamp(a.min(b), a.max(b))
}

/// Pastes the head of `v_b` onto `v_a` through feathered masks.
pub fn head_fusion(
    v_b: &VideoClip,
    v_a: &VideoClip,
    masks_b: &[SegmentationMask],
    feather_radius: usize,
) -> Result<VideoClip> {
    v_b.ensure_same_shape(v_a, "head_fusion")?;
    if masks_b.len() != v_b.len() {
        return Err(Error::shape(format!(
            "head_fusion: {} masks for {} frames",
            masks_b.len(),
            v_b.len()
        )));
    }
    let frames = v_b
        .frames()
        .iter()
        .zip(v_a.frames())
        .zip(masks_b)
        .map(|((fb, fa), mask)| {
            if mask.shape() != fa.shape() {
                return Err(Error::shape(format!(
                    "head_fusion: mask {:?} vs frame {:?}",
                    mask.shape(),
                    fa.shape()
                )));
            }
            let f = feather(mask, feather_radius);
            let mut out = fa.pixels().clone();
            for c in 0..3 {
                Zip::from(out.index_axis_mut(ndarray::Axis(2), c))
                    .and(fb.channel(c))
                    .and(&f)
                    .for_each(|o, &b, &w| *o = blend(*o, b, w));
            }
            Frame::new(out)
        })
        .collect::<Result<Vec<_>>>()?;
    VideoClip::new(frames, v_a.fps())
}

/// Scores how plausible a clip looks as a real recording.
pub trait RealismScorer: Send + Sync {
    fn name(&self) -> &str;
    /// Deterministic probability in `[0, 1]`.
    fn p_real(&self, clip: &VideoClip) -> Result<f64>;
}

/// Flags hard compositing seams through high-frequency luma energy: the mean
/// squared 4-neighbour Laplacian, mapped through `exp(-E / reference_energy)`.
/// Feathering a paste spreads its seam and lowers the energy.
#[derive(Debug, Clone, PartialEq)]
pub struct SeamEnergyScorer {
    pub reference_energy: f64,
}

impl Default for SeamEnergyScorer {
    fn default() -> Self {
        Self { reference_energy: 0.25 }
    }
}

impl SeamEnergyScorer {
    pub fn energy(&self, clip: &VideoClip) -> f64 {
        let total: f64 = clip
            .frames()
            .iter()
            .map(|frame| {
                let g = to_grayscale(frame).intensity;
                let (h, w) = g.dim();
                let mut acc = 0.0f64;
                for y in 1..h - 1 {
                    for x in 1..w - 1 {
                        let lap = g[[y - 1, x]] + g[[y + 1, x]] + g[[y, x - 1]] + g[[y, x + 1]] - 4.0 * g[[y, x]];
                        acc += f64::from(lap) * f64::from(lap);
                    }
                }
                acc / ((h - 2) * (w - 2)) as f64
            })
            .sum();
        total / clip.len() as f64
    }
}

impl RealismScorer for SeamEnergyScorer {
    fn name(&self) -> &str {
        "seam-energy"
    }

    fn p_real(&self, clip: &VideoClip) -> Result<f64> {
        if !(self.reference_energy > 0.0) {
            return Err(Error::invalid("seam-energy reference must be positive"));
        }
        Ok((-self.energy(clip) / self.reference_energy).exp().clamp(0.0, 1.0))
    }
}

pub fn realism_filter(scorer: &dyn RealismScorer, v_d: &VideoClip, threshold: f64) -> Result<RealismScore> {
    let p = scorer.p_real(v_d)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Backend {
            name: scorer.name().to_string(),
            reason: format!("p_real {p} outside [0, 1]"),
        });
    }
    Ok(RealismScore::new(p, threshold))
}

/// Which frame of the ground-truth clip becomes the identity reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReferencePolicy {
    #[default]
    FirstFrame,
    RandomFrame { seed: u64 },
}

/// Where a sample came from and which gates it passed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Provenance {
    pub source_id: String,
    pub generator_seed: u64,
    pub attempts: u32,
    pub reference_frame: usize,
    pub reference_seed: Option<u64>,
    pub nme: f64,
    pub nme_threshold: f64,
    pub p_real: f64,
    pub realism_threshold: f64,
    pub identity_a: Vec<f64>,
    pub identity_d: Vec<f64>,
}

fn join_floats(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

impl Provenance {
    /// Flat `key=value` text, one field per line.
    pub fn to_text(&self) -> String {
        let seed = self.reference_seed.map(|s| s.to_string()).unwrap_or_else(|| "none".into());
        format!(
            "source_id={}\ngenerator_seed={}\nattempts={}\nreference_frame={}\nreference_seed={}\n\
             nme={}\nnme_threshold={}\np_real={}\nrealism_threshold={}\nidentity_a={}\nidentity_d={}\n",
            self.source_id,
            self.generator_seed,
            self.attempts,
            self.reference_frame,
            seed,
            self.nme,
            self.nme_threshold,
            self.p_real,
            self.realism_threshold,
            join_floats(&self.identity_a),
            join_floats(&self.identity_d),
        )
    }

    pub fn from_text(text: &str) -> std::result::Result<Self, String> {
        let mut p = Provenance::default();
        let mut seen = std::collections::BTreeSet::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line.split_once('=').ok_or_else(|| format!("`{line}` is not key=value"))?;
            let num = |v: &str| v.parse::<f64>().map_err(|_| format!("{key}: bad number `{v}`"));
            let int = |v: &str| v.parse::<u64>().map_err(|_| format!("{key}: bad integer `{v}`"));
            let floats = |v: &str| v.split_whitespace().map(num).collect::<std::result::Result<Vec<_>, _>>();
            match key {
                "source_id" => p.source_id = value.to_string(),
                "generator_seed" => p.generator_seed = int(value)?,
                "attempts" => p.attempts = int(value)? as u32,
                "reference_frame" => p.reference_frame = int(value)? as usize,
                "reference_seed" => p.reference_seed = if value == "none" { None } else { Some(int(value)?) },
                "nme" => p.nme = num(value)?,
                "nme_threshold" => p.nme_threshold = num(value)?,
                "p_real" => p.p_real = num(value)?,
                "realism_threshold" => p.realism_threshold = num(value)?,
                "identity_a" => p.identity_a = floats(value)?,
                "identity_d" => p.identity_d = floats(value)?,
                other => return Err(format!("unknown key `{other}`")),
            }
            seen.insert(key.to_string());
        }
        for required in ["source_id", "nme", "p_real", "reference_frame"] {
            if !seen.contains(required) {
                return Err(format!("missing key `{required}`"));
            }
        }
        Ok(p)
    }
}

/// One training tuple: driving clip, identity reference and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub id: String,
    pub v_d: VideoClip,
    pub i_b: Frame,
    pub v_a: VideoClip,
    pub landmarks_a: Vec<LandmarkSet>,
    pub landmarks_d: Vec<LandmarkSet>,
    /// Head region per frame; for synthetic data the union of both heads.
    pub masks: Vec<SegmentationMask>,
    pub provenance: Provenance,
}

impl PairedSample {
    pub fn validate(&self) -> Result<()> {
        self.v_d.ensure_same_shape(&self.v_a, "paired sample")?;
        let f = self.v_a.len();
        if self.landmarks_a.len() != f || self.landmarks_d.len() != f || self.masks.len() != f {
            return Err(Error::shape(format!(
                "paired sample `{}`: {} frames but {}/{} landmark sets and {} masks",
                self.id,
                f,
                self.landmarks_a.len(),
                self.landmarks_d.len(),
                self.masks.len()
            )));
        }
        if self.i_b.shape() != self.v_a.shape() {
            return Err(Error::shape("paired sample: reference frame size differs from clip"));
        }
        Ok(())
    }
}

/// Inputs to [`make_tuple`] beyond the two clips.
#[derive(Debug, Clone)]
pub struct TupleParts {
    pub id: String,
    pub landmarks_a: Vec<LandmarkSet>,
    pub landmarks_d: Vec<LandmarkSet>,
    pub masks: Vec<SegmentationMask>,
    pub alignment: AlignmentReport,
    pub realism: RealismScore,
    pub generator_seed: u64,
    pub attempts: u32,
}

pub fn make_tuple(v_d: VideoClip, v_a: VideoClip, parts: TupleParts, policy: ReferencePolicy) -> Result<PairedSample> {
    if !parts.alignment.accepted || !parts.realism.accepted {
        return Err(Error::invalid(format!(
            "sample `{}` has not passed the alignment and realism filters \
             (nme {} / {}, p_real {} / {}); run nme_alignment_filter and realism_filter first",
            parts.id, parts.alignment.nme, parts.alignment.threshold, parts.realism.p_real, parts.realism.threshold
        )));
    }
    let (reference_frame, reference_seed) = match policy {
        ReferencePolicy::FirstFrame => (0, None),
        ReferencePolicy::RandomFrame { seed } => (ChaCha8Rng::seed_from_u64(seed).gen_range(0..v_a.len()), Some(seed)),
    };
    let sample = PairedSample {
        i_b: v_a.frames()[reference_frame].clone(),
        provenance: Provenance {
            source_id: parts.id.clone(),
            generator_seed: parts.generator_seed,
            attempts: parts.attempts,
            reference_frame,
            reference_seed,
            nme: parts.alignment.nme,
            nme_threshold: parts.alignment.threshold,
            p_real: parts.realism.p_real,
            realism_threshold: parts.realism.threshold,
            identity_a: Vec::new(),
            identity_d: Vec::new(),
        },
        id: parts.id,
        v_d,
        v_a,
        landmarks_a: parts.landmarks_a,
        landmarks_d: parts.landmarks_d,
        masks: parts.masks,
    };
    sample.validate()?;
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array3};
    use proptest::prelude::*;

    fn track(points: Vec<[f64; 2]>, frames: usize) -> Vec<LandmarkSet> {
        (0..frames)
            .map(|i| LandmarkSet::new(points.clone(), i, vec![]).unwrap())
            .collect()
    }

    #[test]
    fn nme_gate_cases() {
        let base = track(vec![[0.0, 0.0], [3.0, 4.0]], 3);
        let r = nme_alignment_filter(&base, &base, 0.3, NmeNormalization::BoundingBox).unwrap();
        assert_eq!((r.nme, r.accepted), (0.0, true));

        // Bounding-box diagonal 5; a shift of 2.5 is half of it.
        let half = track(vec![[2.5, 0.0], [5.5, 4.0]], 3);
        let r = nme_alignment_filter(&base, &half, 0.3, NmeNormalization::BoundingBox).unwrap();
        assert_eq!(r.nme, 0.5);
        assert!(!r.accepted);

        let tie = track(vec![[1.5, 0.0], [4.5, 4.0]], 3);
        let r = nme_alignment_filter(&base, &tie, 0.3, NmeNormalization::BoundingBox).unwrap();
        assert_eq!(r.nme, 0.3);
        assert!(r.accepted);
        assert!(!AlignmentReport::new(0.3 + 1e-9, 0.3).accepted);

        assert!(nme_alignment_filter(&base, &base[..2], 0.3, NmeNormalization::BoundingBox).is_err());
    }

    #[test]
    fn realism_tie_rules() {
        assert!(RealismScore::new(1.0, 0.7).accepted);
        assert!(RealismScore::new(0.7, 0.7).accepted);
        assert!(!RealismScore::new(0.69, 0.7).accepted);
    }

    fn textured(h: usize, w: usize, phase: f32) -> Frame {
        Frame::new(Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
            0.5 + 0.3 * ((x as f32 * 0.4 + y as f32 * 0.25 + phase + c as f32).sin())
        }))
        .unwrap()
    }

    fn clip(frames: Vec<Frame>) -> VideoClip {
        VideoClip::new(frames, 8.0).unwrap()
    }

    fn mask(h: usize, w: usize, f: impl Fn(usize, usize) -> bool) -> SegmentationMask {
        SegmentationMask::new(Array2::from_shape_fn((h, w), |(y, x)| if f(y, x) { 1.0 } else { 0.0 })).unwrap()
    }

    #[test]
    fn fusion_with_trivial_masks() {
        let (h, w) = (20, 24);
        let a = clip(vec![textured(h, w, 0.0), textured(h, w, 0.5)]);
        let b = clip(vec![textured(h, w, 2.0), textured(h, w, 2.5)]);
        let zeros = vec![mask(h, w, |_, _| false); 2];
        let ones = vec![mask(h, w, |_, _| true); 2];
        assert_eq!(head_fusion(&b, &a, &zeros, 3).unwrap(), a);
        assert_eq!(head_fusion(&b, &a, &ones, 3).unwrap(), b);
    }

    #[test]
    fn half_plane_blend_band_matches_radius() {
        let (h, w) = (16, 32);
        let a = clip(vec![textured(h, w, 0.0), textured(h, w, 1.0)]);
        let b = clip(vec![textured(h, w, 3.0), textured(h, w, 4.0)]);
        let edge = 16;
        let masks = vec![mask(h, w, |_, x| x >= edge); 2];
        for radius in [1usize, 3, 5] {
            let out = head_fusion(&b, &a, &masks, radius).unwrap();
            for (t, frame) in out.frames().iter().enumerate() {
                for y in 0..h {
                    for x in 0..w {
                        let got = frame.pixels()[[y, x, 0]];
                        let (pa, pb) = (a.frames()[t].pixels()[[y, x, 0]], b.frames()[t].pixels()[[y, x, 0]]);
                        if x + radius < edge {
                            assert_eq!(got, pa, "r={radius} x={x}");
                        } else if x >= edge + radius {
                            assert_eq!(got, pb, "r={radius} x={x}");
                        } else if pa != pb {
                            assert!(got != pa && got != pb, "r={radius} x={x} should be blended");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn fusion_rejects_mismatched_inputs() {
        let a = clip(vec![textured(16, 16, 0.0); 2]);
        let b = clip(vec![textured(16, 20, 0.0); 2]);
        assert!(head_fusion(&b, &a, &vec![mask(16, 16, |_, _| true); 2], 3).is_err());
        assert!(head_fusion(&a, &a, &vec![mask(16, 16, |_, _| true); 1], 3).is_err());
        assert!(head_fusion(&a, &a, &vec![mask(8, 8, |_, _| true); 2], 3).is_err());
    }

    #[test]
    fn hard_paste_scores_below_feathered_paste() {
        let (h, w) = (32, 32);
        let bg = clip(vec![Frame::filled(h, w, [0.4, 0.4, 0.4]).unwrap(); 3]);
        let head = clip(vec![Frame::filled(h, w, [0.9, 0.3, 0.2]).unwrap(); 3]);
        let disk = vec![mask(h, w, |y, x| (y as f64 - 15.5).powi(2) + (x as f64 - 15.5).powi(2) < 64.0); 3];
        let hard = head_fusion(&head, &bg, &disk, 0).unwrap();
        let soft = head_fusion(&head, &bg, &disk, 3).unwrap();
        let scorer = SeamEnergyScorer::default();
        let (p_hard, p_soft) = (scorer.p_real(&hard).unwrap(), scorer.p_real(&soft).unwrap());
        assert!(p_hard < p_soft, "{p_hard} vs {p_soft}");
        assert_eq!(scorer.p_real(&bg).unwrap(), 1.0);
        let again = realism_filter(&scorer, &hard, 0.7).unwrap();
        assert_eq!(again, realism_filter(&scorer, &hard, 0.7).unwrap());
    }

    fn parts(alignment: AlignmentReport, realism: RealismScore) -> TupleParts {
        TupleParts {
            id: "s".into(),
            landmarks_a: track(vec![[1.0, 1.0], [5.0, 6.0]], 3),
            landmarks_d: track(vec![[1.0, 1.0], [5.0, 6.0]], 3),
            masks: vec![mask(16, 16, |_, _| false); 3],
            alignment,
            realism,
            generator_seed: 9,
            attempts: 1,
        }
    }

    #[test]
    fn make_tuple_policies() {
        let v_a = clip((0..3).map(|i| textured(16, 16, i as f32)).collect());
        let v_d = clip((0..3).map(|i| textured(16, 16, 5.0 + i as f32)).collect());
        let ok = parts(AlignmentReport::new(0.0, 0.3), RealismScore::new(1.0, 0.7));
        let first = make_tuple(v_d.clone(), v_a.clone(), ok.clone(), ReferencePolicy::FirstFrame).unwrap();
        assert_eq!(first.i_b, v_a.frames()[0]);
        assert_eq!(first.provenance.reference_seed, None);

        let policy = ReferencePolicy::RandomFrame { seed: 77 };
        let r1 = make_tuple(v_d.clone(), v_a.clone(), ok.clone(), policy).unwrap();
        let r2 = make_tuple(v_d.clone(), v_a.clone(), ok.clone(), policy).unwrap();
        assert_eq!(r1.provenance.reference_frame, r2.provenance.reference_frame);
        assert_eq!(r1.i_b, v_a.frames()[r1.provenance.reference_frame]);
        assert_eq!(r1.provenance.reference_seed, Some(77));

        let text = r1.provenance.to_text();
        assert_eq!(Provenance::from_text(&text).unwrap(), r1.provenance);

        let bad = parts(AlignmentReport::new(0.5, 0.3), RealismScore::new(1.0, 0.7));
        let err = make_tuple(v_d.clone(), v_a.clone(), bad, ReferencePolicy::FirstFrame).unwrap_err();
        assert!(err.to_string().contains("run nme_alignment_filter"));
        let bad = parts(AlignmentReport::new(0.1, 0.3), RealismScore::new(0.2, 0.7));
        assert!(make_tuple(v_d, v_a, bad, ReferencePolicy::FirstFrame).is_err());
    }

    #[test]
    fn provenance_text_rejects_garbage() {
        assert!(Provenance::from_text("nme=abc").is_err());
        assert!(Provenance::from_text("what=1").is_err());
        assert!(Provenance::from_text("source_id=x").is_err());
    }

    proptest! {
        #[test]
        fn blend_is_convex(a in 0.0f32..=1.0, b in 0.0f32..=1.0, f in 0.0f32..=1.0) {
            let v = blend(a, b, f);
            prop_assert!(v >= a.min(b) && v <= a.max(b));
        }

        #[test]
        fn gates_are_pure(nme in 0.0f64..1.0, p in 0.0f64..=1.0) {
            prop_assert_eq!(AlignmentReport::new(nme, 0.3), AlignmentReport::new(nme, 0.3));
            prop_assert_eq!(AlignmentReport::new(nme, 0.3).accepted, nme <= 0.3);
            prop_assert_eq!(RealismScore::new(p, 0.7).accepted, p >= 0.7);
        }
    }
}
