//! Frames, clips, landmarks and masks.
//!
//! Pixel intensities are `f32` in `[0, 1]`, stored row-major as `H x W x 3`
//! with channel order red, green, blue. Conversion to 8-bit happens only when
//! reading or writing image files.

mod io;
mod ops;

pub use io::{
    load_clip, load_frame, load_landmark_track, load_mask, load_masks, save_clip, save_frame,
    save_gray_png, save_landmark_track, save_mask, save_masks, ClipManifest, CLIP_MANIFEST,
};
pub use ops::{frame_difference, resize_area, to_grayscale, LUMA_WEIGHTS};

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Smallest accepted frame edge in pixels.
pub const MIN_FRAME_EDGE: usize = 8;

/// An RGB frame with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pixels: Array3<f32>,
}

impl Frame {
    pub fn new(pixels: Array3<f32>) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if c != 3 {
            return Err(Error::invalid(format!("frame must have 3 channels, got {c}")));
        }
        if h < MIN_FRAME_EDGE || w < MIN_FRAME_EDGE {
            return Err(Error::invalid(format!(
                "frame {h}x{w} is smaller than the {MIN_FRAME_EDGE}x{MIN_FRAME_EDGE} minimum"
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { pixels })
    }

    /// Builds a frame after clamping every value into `[0, 1]`. NaN maps to 0.
    pub fn from_clamped(mut pixels: Array3<f32>) -> Result<Self> {
        pixels.mapv_inplace(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
        Self::new(pixels)
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let pixels = Array3::from_shape_fn((height, width, 3), |(_, _, c)| rgb[c]);
        Self::new(pixels)
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn pixels(&self) -> &Array3<f32> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array3<f32> {
        self.pixels
    }

    pub fn channel(&self, c: usize) -> ArrayView2<'_, f32> {
        self.pixels.index_axis(Axis(2), c)
    }

    /// Rounds every intensity to the nearest multiple of 1/255 so that the
    /// frame survives an 8-bit file round trip unchanged.
    pub fn quantized(&self) -> Frame {
        Frame {
            pixels: self.pixels.mapv(quantize_u8),
        }
    }
}

pub(crate) fn quantize_u8(v: f32) -> f32 {
    f32::from(to_u8(v)) / 255.0
}

pub(crate) fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Single-channel luminance map with the same spatial size as its source frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayFrame {
    pub intensity: Array2<f32>,
}

impl GrayFrame {
    pub fn shape(&self) -> (usize, usize) {
        self.intensity.dim()
    }
}

/// Ordered frames sharing one spatial size.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: Vec<Frame>,
    fps: f32,
}

impl VideoClip {
    pub fn new(frames: Vec<Frame>, fps: f32) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        if frames.len() < 2 {
            return Err(Error::invalid(format!(
                "a clip needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        let shape = frames[0].shape();
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.shape() != shape) {
            return Err(Error::shape(format!(
                "frame {i} is {:?}, clip frames are {:?}",
                f.shape(),
                shape
            )));
        }
        Ok(Self { frames, fps })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn fps(&self) -> f32 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    /// Always false; clips hold at least two frames.
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.frames[0].shape()
    }

    pub fn quantized(&self) -> VideoClip {
        VideoClip {
            frames: self.frames.iter().map(Frame::quantized).collect(),
            fps: self.fps,
        }
    }

    pub fn ensure_same_shape(&self, other: &VideoClip, what: &str) -> Result<()> {
        if self.len() != other.len() || self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "{what}: clip {}x{:?} vs {}x{:?}",
                self.len(),
                self.shape(),
                other.len(),
                other.shape()
            )));
        }
        Ok(())
    }
}

/// Facial landmarks detected on one frame, as `(x, y)` pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    pub points: Vec<[f64; 2]>,
    pub frame_index: usize,
    /// Indices of contour/jawline points, excluded from expression weighting.
    pub boundary_indices: Vec<usize>,
}

impl LandmarkSet {
    pub fn new(points: Vec<[f64; 2]>, frame_index: usize, boundary_indices: Vec<usize>) -> Result<Self> {
        if let Some(&i) = boundary_indices.iter().find(|&&i| i >= points.len()) {
            return Err(Error::invalid(format!(
                "boundary index {i} out of range for {} points",
                points.len()
            )));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("landmark coordinates must be finite"));
        }
        Ok(Self {
            points,
            frame_index,
            boundary_indices,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Clamps every point into `[0, width) x [0, height)`.
    pub fn clamped(&self, height: usize, width: usize) -> LandmarkSet {
        let max_x = (width as f64 - 1e-6).max(0.0);
        let max_y = (height as f64 - 1e-6).max(0.0);
        LandmarkSet {
            points: self
                .points
                .iter()
                .map(|&[x, y]| [x.clamp(0.0, max_x), y.clamp(0.0, max_y)])
                .collect(),
            frame_index: self.frame_index,
            boundary_indices: self.boundary_indices.clone(),
        }
    }

    /// Points that are not on the face boundary.
    pub fn interior_points(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        self.points
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.boundary_indices.contains(i))
            .map(|(_, p)| *p)
    }
}

/// Checks that a landmark track has one set per frame and a constant point count.
pub fn validate_track(track: &[LandmarkSet]) -> Result<usize> {
    let first = track
        .first()
        .ok_or_else(|| Error::invalid("landmark track is empty"))?;
    let n = first.len();
    if let Some(s) = track.iter().find(|s| s.len() != n) {
        return Err(Error::shape(format!(
            "landmark count changes within a track: {} vs {n} at frame {}",
            s.len(),
            s.frame_index
        )));
    }
    Ok(n)
}

/// Soft head-region mask with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMask {
    alpha: Array2<f32>,
}

impl SegmentationMask {
    pub fn new(alpha: Array2<f32>) -> Result<Self> {
        if let Some(v) = alpha.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("mask value {v} outside [0, 1]")));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> &Array2<f32> {
        &self.alpha
    }

    pub fn shape(&self) -> (usize, usize) {
        self.alpha.dim()
    }

    pub fn quantized(&self) -> SegmentationMask {
        SegmentationMask {
            alpha: self.alpha.mapv(quantize_u8),
        }
    }
}
