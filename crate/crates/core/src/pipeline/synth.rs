//! Procedural paired clips.
//!
//! A scene is a static neutral-toned textured background and a neutral body
//! that follows the head. The head is drawn from an 8-parameter identity:
//!
//! | index | meaning |
//! |---|---|
//! | 0, 1 | horizontal and vertical head scale |
//! | 2 | three-lobe outline amplitude (and its phase) |
//! | 3, 4 | skin hue and brightness |
//! | 5 | hair hue offset from skin |
//! | 6, 7 | hair arc extent and thickness |
//!
//! The trajectory (position, roll, yaw, pitch, mouth aperture) is shared by
//! the two clips of a pair, and facial features and landmarks depend only on
//! the trajectory. The two clips therefore differ only inside the union of
//! the two head regions. Pixels are supersampled and every output is
//! quantized to 8 bits so on-disk copies match exactly.

use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    make_tuple, nme_alignment_filter, realism_filter, PairedSample, ReferencePolicy, SeamEnergyScorer, TupleParts,
    DEFAULT_NME_THRESHOLD, DEFAULT_REALISM_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::media::{Frame, LandmarkSet, SegmentationMask, VideoClip};
use crate::metrics::NmeNormalization;
use crate::seed;

pub const IDENTITY_DIM: usize = 8;
pub const LANDMARK_COUNT: usize = 20;
/// Contour points; excluded from the expression map.
pub const CONTOUR: [usize; 8] = [0, 1, 2, 3, 4, 5, 6, 7];
pub const LEFT_EYE: usize = 10;
pub const RIGHT_EYE: usize = 11;

/// Normalization for NME on synthetic tracks.
pub const SYNTH_NME: NmeNormalization = NmeNormalization::InterOcular {
    left: LEFT_EYE,
    right: RIGHT_EYE,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub fps: f32,
    /// Subsamples per pixel edge.
    pub supersample: usize,
    /// Minimum Euclidean distance between the two identity vectors of a pair.
    pub min_identity_distance: f64,
    /// Nominal head radius as a fraction of the frame height.
    pub head_radius: f64,
    pub reference_policy: ReferencePolicy,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            frames: 8,
            fps: 8.0,
            supersample: 4,
            min_identity_distance: 0.6,
            head_radius: 0.22,
            reference_policy: ReferencePolicy::FirstFrame,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 16 {
            return Err(Error::invalid("synthetic frames must be at least 16x16"));
        }
        if self.frames < 2 || self.supersample == 0 || !(self.fps > 0.0) {
            return Err(Error::invalid("synthetic clips need >= 2 frames, supersample >= 1 and fps > 0"));
        }
        let max_dist = (IDENTITY_DIM as f64).sqrt();
        if !(0.0..max_dist / 2.0).contains(&self.min_identity_distance) {
            return Err(Error::invalid(format!(
                "min identity distance must lie in [0, {})",
                max_dist / 2.0
            )));
        }
        if !(0.05..=0.3).contains(&self.head_radius) {
            return Err(Error::invalid("head radius must lie in [0.05, 0.3] of the height"));
        }
        Ok(())
    }
}

/// Identity parameters, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Identity(pub [f64; IDENTITY_DIM]);

impl Identity {
    pub fn random(rng: &mut impl Rng) -> Self {
        Identity(std::array::from_fn(|_| rng.gen::<f64>()))
    }

    pub fn distance(&self, other: &Identity) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }

    fn look(&self) -> Look {
        let v = &self.0;
        let skin_hue = v[3];
        Look {
            sx: 0.85 + 0.3 * v[0],
            sy: 0.9 + 0.35 * v[1],
            lobe: 0.12 * v[2],
            lobe_phase: 2.0 * PI * v[2],
            skin: hsv(skin_hue, 0.6, 0.6 + 0.35 * v[4]),
            hair: hsv((skin_hue + 0.25 + 0.5 * v[5]).fract(), 0.75, 0.35 + 0.3 * v[4]),
            hair_extent: (60.0 + 140.0 * v[6]).to_radians(),
            hair_thickness: 0.15 + 0.3 * v[7],
        }
    }
}

struct Look {
    sx: f64,
    sy: f64,
    lobe: f64,
    lobe_phase: f64,
    skin: [f64; 3],
    hair: [f64; 3],
    hair_extent: f64,
    hair_thickness: f64,
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    match (i as i64).rem_euclid(6) {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Per-frame head state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub cx: f64,
    pub cy: f64,
    pub roll_deg: f64,
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    /// Mouth opening in `[0, 1]`.
    pub mouth: f64,
}

/// Everything a pair shares apart from the head.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub height: usize,
    pub width: usize,
    pub radius: f64,
    background: [f64; 6],
    body_gray: f64,
    pub trajectory: Vec<Pose>,
}

impl Scene {
    pub fn random(cfg: &SynthConfig, rng: &mut impl Rng) -> Self {
        let (h, w) = (cfg.height as f64, cfg.width as f64);
        let radius = cfg.head_radius * h;
        let cx0 = w * rng.gen_range(0.4..0.6);
        let cy0 = h * rng.gen_range(0.36..0.44);
        let amp_x = w * rng.gen_range(0.0..0.08);
        let amp_y = h * rng.gen_range(0.0..0.04);
        let roll = rng.gen_range(0.0..15.0);
        let yaw = rng.gen_range(0.0..30.0);
        let pitch = rng.gen_range(0.0..15.0);
        let phases: [f64; 6] = std::array::from_fn(|_| rng.gen_range(0.0..2.0 * PI));
        let frames = cfg.frames as f64;
        let trajectory = (0..cfg.frames)
            .map(|t| {
                let s = 2.0 * PI * t as f64 / frames;
                Pose {
                    cx: cx0 + amp_x * (s + phases[0]).sin(),
                    cy: cy0 + amp_y * (s + phases[1]).sin(),
                    roll_deg: roll * (s + phases[2]).sin(),
                    yaw_deg: yaw * (s + phases[3]).sin(),
                    pitch_deg: pitch * (s + phases[4]).sin(),
                    mouth: 0.5 + 0.5 * (2.0 * s + phases[5]).sin(),
                }
            })
            .collect();
        Scene {
            height: cfg.height,
            width: cfg.width,
            radius,
            background: [
                rng.gen_range(0.45..0.7),
                rng.gen_range(0.2..0.5),
                rng.gen_range(0.15..0.35),
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(0.1..0.3),
                rng.gen_range(0.0..2.0 * PI),
            ],
            body_gray: rng.gen_range(0.2..0.35),
            trajectory,
        }
    }

    fn background(&self, x: f64, y: f64) -> [f64; 3] {
        let [base, kx, ky, ph, k2, ph2] = self.background;
        let v = base + 0.08 * (kx * x + ky * y + ph).sin() + 0.05 * (k2 * (x - y) + ph2).cos();
        // Slight warm tint, well under the saturation floor.
        [v + 0.015, v, v - 0.01]
    }

    fn body(&self, pose: &Pose, x: f64, y: f64) -> Option<[f64; 3]> {
        let r = self.radius;
        let top = pose.cy + 1.05 * r;
        if y < top {
            return None;
        }
        let half = 0.45 * r + (y - top) * 1.2;
        let half = half.min(1.5 * r);
        ((x - pose.cx).abs() <= half).then(|| {
            let v = self.body_gray + 0.04 * ((y - top) / r).min(1.0);
            [v, v, v + 0.01]
        })
    }
}

fn to_local(pose: &Pose, radius: f64, x: f64, y: f64) -> (f64, f64) {
    let (s, c) = pose.roll_deg.to_radians().sin_cos();
    let (dx, dy) = ((x - pose.cx) / radius, (y - pose.cy) / radius);
    (c * dx + s * dy, -s * dx + c * dy)
}

fn to_image(pose: &Pose, radius: f64, u: f64, v: f64) -> [f64; 2] {
    let (s, c) = pose.roll_deg.to_radians().sin_cos();
    [pose.cx + radius * (c * u - s * v), pose.cy + radius * (s * u + c * v)]
}

/// Face-feature offset from yaw and pitch, in head units.
fn feature_shift(pose: &Pose) -> (f64, f64) {
    (0.3 * pose.yaw_deg.to_radians().sin(), 0.3 * pose.pitch_deg.to_radians().sin())
}

/// Head-local landmark coordinates; the first eight are the contour.
fn local_landmarks(pose: &Pose) -> [[f64; 2]; LANDMARK_COUNT] {
    let (du, dv) = feature_shift(pose);
    let a = pose.mouth;
    let mut pts = [[0.0; 2]; LANDMARK_COUNT];
    for (k, p) in pts.iter_mut().take(8).enumerate() {
        let t = k as f64 * PI / 4.0;
        *p = [t.cos(), t.sin()];
    }
    let features = [
        [-0.35, -0.38],
        [0.35, -0.38],
        [-0.35, -0.15],
        [0.35, -0.15],
        [0.0, -0.05],
        [0.0, 0.15],
        [-0.25, 0.45],
        [0.25, 0.45],
        [0.0, 0.45 - 0.04 - 0.12 * a],
        [0.0, 0.45 + 0.04 + 0.12 * a],
        [0.0, 0.45 - 0.12 * a],
        [0.0, 0.45 + 0.12 * a],
    ];
    for (p, f) in pts[8..].iter_mut().zip(features) {
        *p = [f[0] + du, f[1] + dv];
    }
    pts
}

pub fn landmarks_for(scene: &Scene, frame_index: usize) -> Result<LandmarkSet> {
    let pose = &scene.trajectory[frame_index];
    let points = local_landmarks(pose)
        .iter()
        .map(|&[u, v]| to_image(pose, scene.radius, u, v))
        .collect();
    Ok(LandmarkSet::new(points, frame_index, CONTOUR.to_vec())?.clamped(scene.height, scene.width))
}

pub fn landmark_track(scene: &Scene) -> Result<Vec<LandmarkSet>> {
    (0..scene.trajectory.len()).map(|t| landmarks_for(scene, t)).collect()
}

enum Region {
    Outside,
    Hair,
    Skin(f64),
}

fn head_region(look: &Look, u: f64, v: f64) -> Region {
    let (a, b) = (u / look.sx, v / look.sy);
    let rho = (a * a + b * b).sqrt();
    let theta = b.atan2(a);
    let edge = 1.0 + look.lobe * (3.0 * theta + look.lobe_phase).cos();
    // Angular distance from straight up.
    let from_up = (theta + PI / 2.0 + PI).rem_euclid(2.0 * PI) - PI;
    let in_arc = from_up.abs() <= look.hair_extent / 2.0;
    if rho <= edge {
        if in_arc && rho >= edge - 0.5 * look.hair_thickness {
            Region::Hair
        } else {
            Region::Skin(rho / edge)
        }
    } else if in_arc && rho <= edge + look.hair_thickness {
        Region::Hair
    } else {
        Region::Outside
    }
}

/// Eyes and mouth, placed from the trajectory only.
fn face_feature(pose: &Pose, u: f64, v: f64) -> Option<[f64; 3]> {
    let (du, dv) = feature_shift(pose);
    let (u, v) = (u - du, v - dv);
    for ex in [-0.35, 0.35] {
        if (u - ex).powi(2) + (v + 0.15).powi(2) <= 0.13f64.powi(2) {
            return Some([0.08, 0.08, 0.1]);
        }
    }
    let half_h = 0.04 + 0.12 * pose.mouth;
    if (u / 0.25).powi(2) + ((v - 0.45) / half_h).powi(2) <= 1.0 {
        return Some([0.45, 0.08, 0.12]);
    }
    None
}

fn head_color(look: &Look, pose: &Pose, u: f64, v: f64) -> Option<[f64; 3]> {
    match head_region(look, u, v) {
        Region::Outside => None,
        Region::Hair => Some(look.hair),
        Region::Skin(r) => Some(face_feature(pose, u, v).unwrap_or_else(|| {
            let shade = 1.0 - 0.15 * r * r;
            look.skin.map(|c| c * shade)
        })),
    }
}

/// Renders clips for each identity over one scene, plus the per-frame
/// coverage of the union of their head regions.
pub fn render(
    scene: &Scene,
    identities: &[Identity],
    supersample: usize,
    fps: f32,
) -> Result<(Vec<VideoClip>, Vec<SegmentationMask>)> {
    let looks: Vec<Look> = identities.iter().map(Identity::look).collect();
    let (h, w) = (scene.height, scene.width);
    let n = looks.len();
    let s = supersample;
    let inv = 1.0 / (s * s) as f64;
    let mut clips: Vec<Vec<Frame>> = vec![Vec::new(); n];
    let mut masks = Vec::new();
    for pose in &scene.trajectory {
        let mut px = vec![Array3::<f64>::zeros((h, w, 3)); n];
        let mut cover = Array2::<f64>::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                for j in 0..s {
                    for i in 0..s {
                        let fx = x as f64 + (i as f64 + 0.5) / s as f64;
                        let fy = y as f64 + (j as f64 + 0.5) / s as f64;
                        let under = scene.body(pose, fx, fy).unwrap_or_else(|| scene.background(fx, fy));
                        let (u, v) = to_local(pose, scene.radius, fx, fy);
                        let mut any = false;
                        for (k, look) in looks.iter().enumerate() {
                            let c = match head_color(look, pose, u, v) {
                                Some(c) => {
                                    any = true;
                                    c
                                }
                                None => under,
                            };
                            for ch in 0..3 {
                                px[k][[y, x, ch]] += c[ch];
                            }
                        }
                        if any {
                            cover[[y, x]] += 1.0;
                        }
                    }
                }
            }
        }
        for (k, p) in px.into_iter().enumerate() {
            clips[k].push(Frame::from_clamped(p.mapv(|v| (v * inv) as f32))?.quantized());
        }
        masks.push(SegmentationMask::new(cover.mapv(|v| (v * inv) as f32))?.quantized());
    }
    let clips = clips
        .into_iter()
        .map(|frames| VideoClip::new(frames, fps))
        .collect::<Result<Vec<_>>>()?;
    Ok((clips, masks))
}

fn generate_one(index: usize, root: u64, cfg: &SynthConfig) -> Result<PairedSample> {
    let sample_seed = seed::derive_indexed(root, "synth", index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let scene = Scene::random(cfg, &mut rng);
    let id_a = Identity::random(&mut rng);
    let id_d = loop {
        let d = Identity::random(&mut rng);
        if d.distance(&id_a) >= cfg.min_identity_distance {
            break d;
        }
    };
    let (clips, masks) = render(&scene, &[id_a, id_d], cfg.supersample, cfg.fps)?;
    let [v_a, v_d]: [VideoClip; 2] = clips.try_into().expect("two clips");
    let landmarks = landmark_track(&scene)?;
    let alignment = nme_alignment_filter(&landmarks, &landmarks, DEFAULT_NME_THRESHOLD, SYNTH_NME)?;
    let realism = realism_filter(&SeamEnergyScorer::default(), &v_d, DEFAULT_REALISM_THRESHOLD)?;
    assert!(
        alignment.accepted && realism.accepted,
        "synthetic sample {index} failed its gates: nme {} p_real {}",
        alignment.nme,
        realism.p_real
    );
    let id = format!("sample_{index:05}");
    let policy = match cfg.reference_policy {
        ReferencePolicy::FirstFrame => ReferencePolicy::FirstFrame,
        ReferencePolicy::RandomFrame { seed } => ReferencePolicy::RandomFrame {
            seed: seed::derive_indexed(seed, "reference", index as u64),
        },
    };
    let parts = TupleParts {
        id,
        landmarks_a: landmarks.clone(),
        landmarks_d: landmarks,
        masks,
        alignment,
        realism,
        generator_seed: sample_seed,
        attempts: 1,
    };
    let mut sample = make_tuple(v_d, v_a, parts, policy)?;
    sample.provenance.identity_a = id_a.0.to_vec();
    sample.provenance.identity_d = id_d.0.to_vec();
    Ok(sample)
}

/// `n` paired samples, reproducible from `seed`. Samples render in parallel.
pub fn synth_generate(n: usize, seed: u64, cfg: &SynthConfig) -> Result<Vec<PairedSample>> {
    if n == 0 {
        return Err(Error::invalid("synth_generate needs n >= 1"));
    }
    cfg.validate()?;
    (0..n).into_par_iter().map(|i| generate_one(i, seed, cfg)).collect()
}

/// Outcome of the toy identity oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityVerdict {
    /// Mean squared error to the ground truth inside the head region.
    pub mse_target: f64,
    /// Same against the driving clip.
    pub mse_driving: f64,
    pub matches_reference: bool,
}

/// Classifies a generated clip's head as the reference identity when it is
/// closer to the ground truth than to the driving clip inside the head union.
pub fn identity_oracle(output: &VideoClip, sample: &PairedSample) -> Result<IdentityVerdict> {
    output.ensure_same_shape(&sample.v_a, "identity oracle")?;
    let (mut ea, mut ed, mut n) = (0.0f64, 0.0f64, 0usize);
    for ((o, (a, d)), m) in output
        .frames()
        .iter()
        .zip(sample.v_a.frames().iter().zip(sample.v_d.frames()))
        .zip(&sample.masks)
    {
        for ((y, x), &alpha) in m.alpha().indexed_iter() {
            if alpha <= 0.0 {
                continue;
            }
            for c in 0..3 {
                let ov = f64::from(o.pixels()[[y, x, c]]);
                ea += (ov - f64::from(a.pixels()[[y, x, c]])).powi(2);
                ed += (ov - f64::from(d.pixels()[[y, x, c]])).powi(2);
            }
            n += 3;
        }
    }
    if n == 0 {
        return Err(Error::invalid(format!("sample `{}` has an empty head region", sample.id)));
    }
    let (mse_target, mse_driving) = (ea / n as f64, ed / n as f64);
    Ok(IdentityVerdict {
        mse_target,
        mse_driving,
        matches_reference: mse_target < mse_driving,
    })
}
