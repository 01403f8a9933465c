//! Motion- and expression-aware reconstruction weights.
//!
//! A motion heatmap `D` comes from dilated inter-frame luminance differences,
//! an expression heatmap `L` from smoothed interior facial landmarks. They are
//! fused as `A = D + alpha * L * (1 - D)`: the `(1 - D)` factor gates the
//! expression term off where motion already saturates the weight. The fused
//! map, resized to latent resolution, reweights the per-pixel diffusion loss
//! through `w = 1 + lambda * A`.

use std::path::Path;

use ndarray::{s, Array2, Array3, Array5, Axis, Zip};

use crate::canvas::LatentTensor;
use crate::error::{Error, Result};
use crate::filter::{self, Border};
use crate::media::{self, frame_difference, resize_area, to_grayscale, LandmarkSet, VideoClip};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResolutionSpace {
    Pixel,
    Latent,
}

/// Per-frame nonnegative spatial weights, `(frames, height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    pub weights: Array3<f32>,
    pub space: ResolutionSpace,
}

impl WeightMap {
    pub fn new(weights: Array3<f32>, space: ResolutionSpace) -> Result<Self> {
        if let Some(v) = weights.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(format!("weight {v} is negative or non-finite")));
        }
        Ok(Self { weights, space })
    }

    pub fn zeros(frames: usize, height: usize, width: usize, space: ResolutionSpace) -> Self {
        Self {
            weights: Array3::zeros((frames, height, width)),
            space,
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.weights.dim()
    }

    pub fn frames(&self) -> usize {
        self.dims().0
    }
}

/// Width of the landmark smoothing Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LandmarkSigma {
    /// Fraction of the frame height.
    RelativeToHeight(f64),
    Pixels(f64),
}

impl LandmarkSigma {
    pub fn resolve(&self, height: usize) -> f64 {
        match *self {
            LandmarkSigma::RelativeToHeight(f) => f * height as f64,
            LandmarkSigma::Pixels(p) => p,
        }
    }
}

/// Scope of the min-max normalization applied to `D` and `L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizationScope {
    Clip,
    Frame,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MearConfig {
    pub alpha: f64,
    pub dilation_radius: usize,
    pub dilation_iterations: usize,
    pub landmark_sigma: LandmarkSigma,
    pub aggregation_window: usize,
    pub weight_floor_lambda: f64,
    pub normalization: NormalizationScope,
}

impl Default for MearConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            dilation_radius: 2,
            dilation_iterations: 2,
            landmark_sigma: LandmarkSigma::RelativeToHeight(0.04),
            aggregation_window: 5,
            weight_floor_lambda: 1.0,
            normalization: NormalizationScope::Clip,
        }
    }
}

impl MearConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.dilation_radius < 1 || self.dilation_iterations < 1 || self.aggregation_window < 1 {
            return Err(Error::invalid(
                "dilation radius, dilation iterations and aggregation window must be >= 1",
            ));
        }
        let sigma_ok = match self.landmark_sigma {
            LandmarkSigma::RelativeToHeight(v) | LandmarkSigma::Pixels(v) => v.is_finite() && v > 0.0,
        };
        if !sigma_ok {
            return Err(Error::invalid("landmark sigma must be positive"));
        }
        if !(self.weight_floor_lambda.is_finite() && self.weight_floor_lambda >= 0.0) {
            return Err(Error::invalid("weight floor lambda must be >= 0"));
        }
        Ok(())
    }
}

fn min_max_normalize(maps: &mut [Array2<f32>], scope: NormalizationScope) {
    fn normalize(group: &mut [Array2<f32>]) {
        let (lo, hi) = group
            .iter()
            .flat_map(|m| m.iter())
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let range = hi - lo;
        for m in group.iter_mut() {
            if range > 0.0 {
                m.mapv_inplace(|v| ((v - lo) / range).clamp(0.0, 1.0));
            } else {
                // A uniform nonzero response is its own maximum.
                m.fill(if hi > 0.0 { 1.0 } else { 0.0 });
            }
        }
    }
    match scope {
        NormalizationScope::Clip => normalize(maps),
        NormalizationScope::Frame => maps.chunks_mut(1).for_each(normalize),
    }
}

fn stack(maps: Vec<Array2<f32>>, space: ResolutionSpace) -> WeightMap {
    let views: Vec<_> = maps.iter().map(|m| m.view()).collect();
    WeightMap {
        weights: ndarray::stack(Axis(0), &views).expect("maps share a shape"),
        space,
    }
}

/// Motion heatmap `D` in pixel space, one map per frame.
pub fn motion_map(clip: &VideoClip, cfg: &MearConfig) -> Result<WeightMap> {
    if clip.len() < 2 {
        return Err(Error::invalid("motion map needs at least two frames"));
    }
    let grays: Vec<_> = clip.frames().iter().map(to_grayscale).collect();
    let mut maps = grays
        .windows(2)
        .map(|pair| {
            let mut m = frame_difference(&pair[0], &pair[1])?;
            for _ in 0..cfg.dilation_iterations {
                m = filter::dilate_max(&m, cfg.dilation_radius);
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    min_max_normalize(&mut maps, cfg.normalization);
    // F frames have F-1 transitions; the last frame reuses the final one.
    let last = maps.last().expect("at least one transition").clone();
    maps.push(last);
    Ok(stack(maps, ResolutionSpace::Pixel))
}

/// Expression heatmap `L` in pixel space, one map per landmark set.
pub fn expression_map(
    landmarks: &[LandmarkSet],
    frame_shape: (usize, usize),
    cfg: &MearConfig,
) -> Result<WeightMap> {
    media::validate_track(landmarks)?;
    let (h, w) = frame_shape;
    if h == 0 || w == 0 {
        return Err(Error::invalid("frame shape must be positive"));
    }
    let sigma = cfg.landmark_sigma.resolve(h);
    let radius = filter::gaussian_radius(sigma);
    let mut maps: Vec<Array2<f32>> = landmarks
        .iter()
        .map(|set| {
            let set = set.clamped(h, w);
            let mut grid = Array2::<f64>::zeros((h, w));
            for [x, y] in set.interior_points() {
                grid[[y as usize, x as usize]] += 1.0;
            }
            let agg = filter::box_sum(&grid, cfg.aggregation_window);
            filter::gaussian_blur(&agg, sigma, radius, Border::Zero).mapv(|v| v as f32)
        })
        .collect();
    min_max_normalize(&mut maps, cfg.normalization);
    Ok(stack(maps, ResolutionSpace::Pixel))
}

/// Scalar form of the fusion rule.
#[inline]
pub fn fuse_value(d: f32, l: f32, alpha: f32) -> f32 {
    (d + alpha * l * (1.0 - d)).min(1.0)
}

pub fn fuse(d: &WeightMap, l: &WeightMap, alpha: f64) -> Result<WeightMap> {
    if d.dims() != l.dims() || d.space != l.space {
        return Err(Error::shape(format!(
            "fuse: D {:?} ({:?}) vs L {:?} ({:?})",
            d.dims(),
            d.space,
            l.dims(),
            l.space
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    let alpha = alpha as f32;
    let weights = Zip::from(&d.weights)
        .and(&l.weights)
        .map_collect(|&dv, &lv| fuse_value(dv, lv, alpha));
    Ok(WeightMap {
        weights,
        space: d.space,
    })
}

/// Area-resamples each pixel-space frame to latent resolution.
pub fn to_latent_weights(a: &WeightMap, latent_shape: (usize, usize, usize)) -> Result<WeightMap> {
    let (f, hl, wl) = latent_shape;
    if a.frames() != f {
        return Err(Error::shape(format!(
            "to_latent_weights: map has {} frames, latent has {f}",
            a.frames()
        )));
    }
    let maps = a
        .weights
        .outer_iter()
        .map(|frame| resize_area(frame, hl, wl))
        .collect::<Result<Vec<_>>>()?;
    Ok(stack(maps, ResolutionSpace::Latent))
}

/// The three maps for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct MearMaps {
    pub motion: WeightMap,
    pub expression: WeightMap,
    pub fused: WeightMap,
}

pub fn compute_maps(clip: &VideoClip, landmarks: &[LandmarkSet], cfg: &MearConfig) -> Result<MearMaps> {
    if landmarks.len() != clip.len() {
        return Err(Error::shape(format!(
            "{} landmark sets for {} frames",
            landmarks.len(),
            clip.len()
        )));
    }
    let motion = motion_map(clip, cfg)?;
    let expression = expression_map(landmarks, clip.shape(), cfg)?;
    let fused = fuse(&motion, &expression, cfg.alpha)?;
    Ok(MearMaps {
        motion,
        expression,
        fused,
    })
}

/// Final per-pixel loss weights `1 + lambda * A`.
pub fn pixel_weights(a_mear: &Array3<f64>, lambda: f64) -> Array3<f64> {
    a_mear.mapv(|a| 1.0 + lambda * a)
}

fn check_loss_shapes(pred: &[usize], target: &[usize], weights: &[usize]) -> Result<()> {
    if pred != target {
        return Err(Error::shape(format!("prediction {pred:?} vs target {target:?}")));
    }
    if pred.len() != 5 || weights.len() != 3 || pred[2..] != *weights {
        return Err(Error::shape(format!(
            "weights {weights:?} do not match latent (F, H, W) of {pred:?}"
        )));
    }
    Ok(())
}

/// `sum(w * (pred - target)^2) / sum(w)` with `w` of shape `(F, H, W)`
/// broadcast over batch and channels.
pub fn normalized_weighted_mse(pred: &Array5<f64>, target: &Array5<f64>, w: &Array3<f64>) -> Result<f64> {
    check_loss_shapes(pred.shape(), target.shape(), w.shape())?;
    let mut num = 0.0;
    let mut den = 0.0;
    for ((idx, &p), &t) in pred.indexed_iter().zip(target.iter()) {
        let wi = w[[idx.2, idx.3, idx.4]];
        let d = p - t;
        num += wi * d * d;
        den += wi;
    }
    if den <= 0.0 {
        return Err(Error::invalid("loss weights sum to zero"));
    }
    Ok(num / den)
}

/// Analytic gradient of [`normalized_weighted_mse`] with respect to `pred`.
pub fn normalized_weighted_mse_grad(
    pred: &Array5<f64>,
    target: &Array5<f64>,
    w: &Array3<f64>,
) -> Result<Array5<f64>> {
    check_loss_shapes(pred.shape(), target.shape(), w.shape())?;
    let (b, c, ..) = pred.dim();
    let den = w.sum() * (b * c) as f64;
    if den <= 0.0 {
        return Err(Error::invalid("loss weights sum to zero"));
    }
    let mut grad = pred - target;
    for (idx, g) in grad.indexed_iter_mut() {
        *g *= 2.0 * w[[idx.2, idx.3, idx.4]] / den;
    }
    Ok(grad)
}

/// MEAR-weighted reconstruction loss between two latents.
pub fn weighted_mse(
    pred: &LatentTensor,
    target: &LatentTensor,
    a_mear: &WeightMap,
    cfg: &MearConfig,
) -> Result<f64> {
    if a_mear.space != ResolutionSpace::Latent {
        return Err(Error::invalid("loss weights must be in latent space"));
    }
    let w = pixel_weights(&a_mear.weights.mapv(f64::from), cfg.weight_floor_lambda);
    normalized_weighted_mse(&pred.data().mapv(f64::from), &target.data().mapv(f64::from), &w)
}

/// Renders `D | L | A` side by side, one row per frame, with mid-gray separators.
pub fn weights_grid(maps: &MearMaps) -> Array2<f32> {
    let (f, h, w) = maps.motion.dims();
    let gap = 1;
    let mut grid = Array2::from_elem((f * h + (f - 1) * gap, 3 * w + 2 * gap), 0.5f32);
    for t in 0..f {
        for (col, m) in [&maps.motion, &maps.expression, &maps.fused].into_iter().enumerate() {
            let y0 = t * (h + gap);
            let x0 = col * (w + gap);
            grid.slice_mut(s![y0..y0 + h, x0..x0 + w])
                .assign(&m.weights.index_axis(Axis(0), t).mapv(|v| v.clamp(0.0, 1.0)));
        }
    }
    grid
}

pub fn save_weights_grid(maps: &MearMaps, path: &Path) -> Result<()> {
    media::save_gray_png(&weights_grid(maps), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::Frame;
    use approx::assert_abs_diff_eq;
    use ndarray::Array3 as A3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn clip_of(frames: Vec<Frame>) -> VideoClip {
        VideoClip::new(frames, 8.0).unwrap()
    }

    fn dot_frame(h: usize, w: usize, dot: Option<(usize, usize)>) -> Frame {
        let mut px = A3::<f32>::zeros((h, w, 3));
        if let Some((y, x)) = dot {
            px.slice_mut(s![y, x, ..]).fill(1.0);
        }
        Frame::new(px).unwrap()
    }

    #[test]
    fn static_clip_has_zero_motion() {
        let f = Frame::filled(16, 16, [0.3, 0.6, 0.2]).unwrap();
        let d = motion_map(&clip_of(vec![f.clone(), f.clone(), f]), &MearConfig::default()).unwrap();
        assert_eq!(d.dims(), (3, 16, 16));
        assert!(d.weights.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn black_to_white_is_all_ones() {
        let clip = clip_of(vec![
            Frame::filled(8, 8, [0.0; 3]).unwrap(),
            Frame::filled(8, 8, [1.0; 3]).unwrap(),
        ]);
        let d = motion_map(&clip, &MearConfig::default()).unwrap();
        assert!(d.weights.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn moving_dot_matches_brute_force_dilation() {
        let (h, w) = (20, 20);
        let path = [(5, 5), (5, 7), (9, 12)];
        let clip = clip_of(path.iter().map(|&p| dot_frame(h, w, Some(p))).collect());
        let cfg = MearConfig::default();
        let d = motion_map(&clip, &cfg).unwrap();
        // Two iterations of radius-2 square dilation reach Chebyshev distance 4.
        let reach = cfg.dilation_radius * cfg.dilation_iterations;
        for t in 0..3 {
            let (a, b) = (path[t.min(1)], path[t.min(1) + 1]);
            for y in 0..h {
                for x in 0..w {
                    let near = |(py, px): (usize, usize)| {
                        y.abs_diff(py).max(x.abs_diff(px)) <= reach
                    };
                    let expected = if near(a) || near(b) { 1.0 } else { 0.0 };
                    assert_eq!(d.weights[[t, y, x]], expected, "t={t} y={y} x={x}");
                }
            }
        }
    }

    #[test]
    fn single_frame_rejected() {
        // VideoClip itself refuses one frame, so the motion map can never see one.
        assert!(VideoClip::new(vec![Frame::filled(8, 8, [0.0; 3]).unwrap()], 8.0).is_err());
    }

    #[test]
    fn expression_map_cases() {
        let cfg = MearConfig::default();
        let all_boundary = vec![LandmarkSet::new(vec![[3.0, 3.0], [5.0, 5.0]], 0, vec![0, 1]).unwrap()];
        let l = expression_map(&all_boundary, (16, 16), &cfg).unwrap();
        assert!(l.weights.iter().all(|&v| v == 0.0));

        let (h, w) = (32usize, 32usize);
        let center = LandmarkSet::new(vec![[w as f64 / 2.0, h as f64 / 2.0]], 0, vec![]).unwrap();
        let l = expression_map(&[center.clone(), center], (h, w), &cfg).unwrap();
        let f0 = l.weights.index_axis(Axis(0), 0);
        assert_eq!(f0, l.weights.index_axis(Axis(0), 1));
        assert_abs_diff_eq!(f0[[h / 2, w / 2]], 1.0);
        let peak = f0.iter().cloned().fold(0.0, f32::max);
        assert_eq!(peak, 1.0);
        for dy in 0..6usize {
            for dx in 0..6usize {
                let v = f0[[h / 2 + dy, w / 2 + dx]];
                assert_abs_diff_eq!(v, f0[[h / 2 - dy, w / 2 - dx]], epsilon = 1e-6);
                assert_abs_diff_eq!(v, f0[[h / 2 + dx, w / 2 + dy]], epsilon = 1e-6);
                assert_abs_diff_eq!(v, f0[[h / 2 - dy, w / 2 + dx]], epsilon = 1e-6);
            }
        }
        // Matches the direct evaluation of box-sum followed by the Gaussian.
        let sigma = 0.04 * h as f64;
        let taps = filter::gaussian_kernel(sigma, filter::gaussian_radius(sigma));
        let r = taps.len() as isize / 2;
        let profile = |d: isize| -> f64 {
            (-2..=2)
                .map(|s: isize| {
                    let k = d - s;
                    if k.abs() <= r {
                        taps[(k + r) as usize]
                    } else {
                        0.0
                    }
                })
                .sum()
        };
        let p0 = profile(0);
        for dy in -4isize..=4 {
            for dx in -4isize..=4 {
                let expect = profile(dy) * profile(dx) / (p0 * p0);
                let got = f0[[(h as isize / 2 + dy) as usize, (w as isize / 2 + dx) as usize]];
                assert_abs_diff_eq!(got as f64, expect, epsilon = 1e-5);
            }
        }
        assert!(expression_map(&[], (16, 16), &cfg).is_err());
    }

    #[test]
    fn out_of_bounds_landmarks_are_clamped() {
        let set = LandmarkSet::new(vec![[-5.0, 100.0]], 0, vec![]).unwrap();
        let l = expression_map(&[set], (16, 16), &MearConfig::default()).unwrap();
        let corner = LandmarkSet::new(vec![[0.0, 15.0]], 0, vec![]).unwrap();
        let expect = expression_map(&[corner], (16, 16), &MearConfig::default()).unwrap();
        assert_eq!(l, expect);
        assert!(l.weights[[0, 15, 0]] > 0.5 && l.weights[[0, 0, 15]] == 0.0);
    }

    fn wm(v: f32) -> WeightMap {
        WeightMap::new(A3::from_elem((2, 3, 3), v), ResolutionSpace::Pixel).unwrap()
    }

    #[test]
    fn fuse_examples() {
        let l = wm(0.8);
        let a = fuse(&wm(0.0), &l, 0.5).unwrap();
        assert!(a.weights.iter().all(|&v| v == 0.5 * 0.8));
        let a = fuse(&wm(1.0), &l, 0.5).unwrap();
        assert!(a.weights.iter().all(|&v| v == 1.0));
        let a = fuse(&wm(0.4), &l, 0.5).unwrap();
        assert!(a.weights.iter().all(|&v| (v - 0.64).abs() < 1e-6));
        let other = WeightMap::zeros(2, 3, 4, ResolutionSpace::Pixel);
        assert!(fuse(&wm(0.0), &other, 0.5).is_err());
        let latent = WeightMap::zeros(2, 3, 3, ResolutionSpace::Latent);
        assert!(fuse(&wm(0.0), &latent, 0.5).is_err());
    }

    #[test]
    fn latent_resize_examples() {
        let c = WeightMap::new(A3::from_elem((3, 16, 16), 0.25), ResolutionSpace::Pixel).unwrap();
        let r = to_latent_weights(&c, (3, 4, 4)).unwrap();
        assert_eq!(r.space, ResolutionSpace::Latent);
        assert!(r.weights.iter().all(|&v| (v - 0.25).abs() < 1e-6));

        let checker = A3::from_shape_fn((2, 8, 8), |(_, y, x)| ((x + y) % 2) as f32);
        let r = to_latent_weights(&WeightMap::new(checker.clone(), ResolutionSpace::Pixel).unwrap(), (2, 4, 4))
            .unwrap();
        assert!(r.weights.iter().all(|&v| (v - 0.5).abs() < 1e-7));
        let id = to_latent_weights(&WeightMap::new(checker.clone(), ResolutionSpace::Pixel).unwrap(), (2, 8, 8))
            .unwrap();
        assert_eq!(id.weights, checker);
        assert!(to_latent_weights(&c, (2, 4, 4)).is_err());
    }

    fn latent(v: Vec<f32>, shape: (usize, usize, usize, usize, usize)) -> LatentTensor {
        LatentTensor::new(Array5::from_shape_vec(shape, v).unwrap()).unwrap()
    }

    #[test]
    fn weighted_mse_examples() {
        let cfg = MearConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = (2, 3, 2, 2, 2);
        let n = 2 * 3 * 2 * 2 * 2;
        let p: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = WeightMap::new(
            A3::from_shape_simple_fn((2, 2, 2), || rng.gen_range(0.0..1.0)),
            ResolutionSpace::Latent,
        )
        .unwrap();
        let pred = latent(p.clone(), shape);
        assert_eq!(weighted_mse(&pred, &pred, &a, &cfg).unwrap(), 0.0);

        let zero_a = WeightMap::zeros(2, 2, 2, ResolutionSpace::Latent);
        let plain: f64 =
            p.iter().zip(&t).map(|(x, y)| f64::from(x - y).powi(2)).sum::<f64>() / n as f64;
        let got = weighted_mse(&pred, &latent(t.clone(), shape), &zero_a, &cfg).unwrap();
        assert_abs_diff_eq!(got, plain, epsilon = 1e-12);

        let no_floor = MearConfig {
            weight_floor_lambda: 0.0,
            ..MearConfig::default()
        };
        let got = weighted_mse(&pred, &latent(t, shape), &a, &no_floor).unwrap();
        assert_abs_diff_eq!(got, plain, epsilon = 1e-12);

        let one = WeightMap::new(A3::ones((1, 1, 1)), ResolutionSpace::Latent).unwrap();
        let got = weighted_mse(
            &latent(vec![1.0], (1, 1, 1, 1, 1)),
            &latent(vec![0.0], (1, 1, 1, 1, 1)),
            &one,
            &cfg,
        )
        .unwrap();
        assert_eq!(got, 1.0);

        let bad = WeightMap::zeros(2, 2, 3, ResolutionSpace::Latent);
        assert!(weighted_mse(&pred, &pred, &bad, &cfg).is_err());
        let pixel = WeightMap::zeros(2, 2, 2, ResolutionSpace::Pixel);
        assert!(weighted_mse(&pred, &pred, &pixel, &cfg).is_err());
    }

    #[test]
    fn weighted_mse_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let shape = (1, 2, 2, 3, 2);
        let pred = Array5::from_shape_simple_fn(shape, || rng.gen_range(-1.0..1.0));
        let target = Array5::from_shape_simple_fn(shape, || rng.gen_range(-1.0..1.0));
        let w = pixel_weights(&A3::from_shape_simple_fn((2, 3, 2), || rng.gen_range(0.0..1.0)), 1.0);
        let g = normalized_weighted_mse_grad(&pred, &target, &w).unwrap();
        let eps = 1e-4;
        for (idx, &gv) in g.indexed_iter() {
            let mut up = pred.clone();
            up[idx] += eps;
            let mut dn = pred.clone();
            dn[idx] -= eps;
            let fd = (normalized_weighted_mse(&up, &target, &w).unwrap()
                - normalized_weighted_mse(&dn, &target, &w).unwrap())
                / (2.0 * eps);
            assert!((fd - gv).abs() <= 1e-4 * gv.abs().max(1e-8), "{idx:?}: {fd} vs {gv}");
        }
    }

    #[test]
    fn maps_are_deterministic_and_grid_has_expected_size() {
        let clip = clip_of(vec![
            dot_frame(16, 16, Some((3, 3))),
            dot_frame(16, 16, Some((4, 6))),
            dot_frame(16, 16, Some((8, 8))),
        ]);
        let lms: Vec<_> = (0..3)
            .map(|i| LandmarkSet::new(vec![[4.0 + i as f64, 8.0], [1.0, 1.0]], i, vec![1]).unwrap())
            .collect();
        let cfg = MearConfig::default();
        let a = compute_maps(&clip, &lms, &cfg).unwrap();
        let b = compute_maps(&clip, &lms, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(weights_grid(&a).dim(), (3 * 16 + 2, 3 * 16 + 2));
    }

    proptest! {
        #[test]
        fn fused_weights_stay_in_unit_range_and_are_monotone(
            d in 0.0f32..=1.0, l in 0.0f32..=1.0, l2 in 0.0f32..=1.0, alpha in 0.0f32..=1.0
        ) {
            let a = fuse_value(d, l, alpha);
            prop_assert!((0.0..=1.0).contains(&a));
            let (lo, hi) = if l <= l2 { (l, l2) } else { (l2, l) };
            prop_assert!(fuse_value(d, lo, alpha) <= fuse_value(d, hi, alpha));
        }

        #[test]
        fn fused_weight_approaches_one_as_motion_saturates(l in 0.0f32..=1.0, alpha in 0.0f32..=1.0, gap in 0.0f32..1e-3) {
            prop_assert!((fuse_value(1.0 - gap, l, alpha) - 1.0).abs() <= gap + 1e-6);
        }

        #[test]
        fn loss_invariant_to_weight_scale(seed in 0u64..1000, scale in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shape = (1, 2, 2, 2, 3);
            let p = Array5::from_shape_simple_fn(shape, || rng.gen_range(-1.0..1.0));
            let t = Array5::from_shape_simple_fn(shape, || rng.gen_range(-1.0..1.0));
            let w = A3::from_shape_simple_fn((2, 2, 3), || rng.gen_range(0.1..2.0));
            let base = normalized_weighted_mse(&p, &t, &w).unwrap();
            let scaled = normalized_weighted_mse(&p, &t, &w.mapv(|v| v * scale)).unwrap();
            prop_assert!((base - scaled).abs() <= 1e-12 * base.max(1.0));
            prop_assert!(base >= 0.0);
        }
    }
}
