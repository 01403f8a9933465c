//! On-disk layouts.
//!
//! A clip is a directory holding `frame_000000.png`, `frame_000001.png`, ...
//! (8-bit RGB) and a `clip.json` manifest with fps, frame count and size.
//!
//! A landmark track is a text file with one record per frame:
//!
//! ```text
//! # landmarks v1
//! <frame_index> <n> x0 y0 x1 y1 ... ; b0 b1 ...
//! ```
//!
//! where the indices after `;` are the boundary (contour) points. Blank lines
//! and lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{to_u8, Frame, LandmarkSet, SegmentationMask, VideoClip};
use crate::error::{Error, Result};

pub const CLIP_MANIFEST: &str = "clip.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipManifest {
    pub fps: f32,
    pub frame_count: usize,
    pub height: usize,
    pub width: usize,
}

fn frame_file(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("frame_{index:06}.png"))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn save_frame(frame: &Frame, path: &Path) -> Result<()> {
    let (h, w) = frame.shape();
    let px = frame.pixels();
    let img: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([to_u8(px[[y, x, 0]]), to_u8(px[[y, x, 1]]), to_u8(px[[y, x, 2]])])
    });
    img.save(path).map_err(|source| Error::Image {
        path: path.to_owned(),
        source,
    })
}

pub fn load_frame(path: &Path) -> Result<Frame> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_owned(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let pixels = Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
        f32::from(img.get_pixel(x as u32, y as u32)[c]) / 255.0
    });
    Frame::new(pixels).map_err(|e| Error::malformed(path, e.to_string()))
}

/// Writes a single-channel map in `[0, 1]` as an 8-bit grayscale PNG.
pub fn save_gray_png(map: &Array2<f32>, path: &Path) -> Result<()> {
    let (h, w) = map.dim();
    let img: GrayImage =
        ImageBuffer::from_fn(w as u32, h as u32, |x, y| Luma([to_u8(map[[y as usize, x as usize]])]));
    img.save(path).map_err(|source| Error::Image {
        path: path.to_owned(),
        source,
    })
}

pub fn save_mask(mask: &SegmentationMask, path: &Path) -> Result<()> {
    save_gray_png(mask.alpha(), path)
}

pub fn load_mask(path: &Path) -> Result<SegmentationMask> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_owned(),
            source,
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    let alpha = Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        f32::from(img.get_pixel(x as u32, y as u32)[0]) / 255.0
    });
    SegmentationMask::new(alpha)
}

pub fn save_clip(clip: &VideoClip, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    for (i, f) in clip.frames().iter().enumerate() {
        save_frame(f, &frame_file(dir, i))?;
    }
    let manifest = ClipManifest {
        fps: clip.fps(),
        frame_count: clip.len(),
        height: clip.height(),
        width: clip.width(),
    };
    let path = dir.join(CLIP_MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_clip(dir: &Path) -> Result<VideoClip> {
    let path = dir.join(CLIP_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: ClipManifest =
        serde_json::from_str(&text).map_err(|e| Error::malformed(&path, e.to_string()))?;
    let frames = (0..manifest.frame_count)
        .map(|i| load_frame(&frame_file(dir, i)))
        .collect::<Result<Vec<_>>>()?;
    if let Some(f) = frames.iter().find(|f| f.shape() != (manifest.height, manifest.width)) {
        return Err(Error::malformed(
            &path,
            format!(
                "manifest says {}x{}, frame is {:?}",
                manifest.height,
                manifest.width,
                f.shape()
            ),
        ));
    }
    VideoClip::new(frames, manifest.fps).map_err(|e| Error::malformed(dir, e.to_string()))
}

pub fn save_masks(masks: &[SegmentationMask], dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    for (i, m) in masks.iter().enumerate() {
        save_mask(m, &dir.join(format!("mask_{i:06}.png")))?;
    }
    Ok(())
}

pub fn load_masks(dir: &Path, count: usize) -> Result<Vec<SegmentationMask>> {
    (0..count)
        .map(|i| load_mask(&dir.join(format!("mask_{i:06}.png"))))
        .collect()
}

pub fn save_landmark_track(track: &[LandmarkSet], path: &Path) -> Result<()> {
    let mut out = String::from("# landmarks v1\n");
    for set in track {
        write!(out, "{} {}", set.frame_index, set.len()).unwrap();
        for [x, y] in &set.points {
            write!(out, " {x} {y}").unwrap();
        }
        out.push_str(" ;");
        for b in &set.boundary_indices {
            write!(out, " {b}").unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_landmark_track(path: &Path) -> Result<Vec<LandmarkSet>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut track = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |why: &str| Error::malformed(path, format!("line {}: {why}", lineno + 1));
        let (head, tail) = line.split_once(';').ok_or_else(|| bad("missing `;`"))?;
        let mut fields = head.split_whitespace();
        let frame_index: usize = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad frame index"))?;
        let n: usize = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad point count"))?;
        let coords = fields
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad("bad coordinate"))?;
        if coords.len() != 2 * n {
            return Err(bad(&format!("expected {} coordinates, got {}", 2 * n, coords.len())));
        }
        let boundary = tail
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad("bad boundary index"))?;
        let points = coords.chunks(2).map(|c| [c[0], c[1]]).collect();
        track.push(LandmarkSet::new(points, frame_index, boundary).map_err(|e| bad(&e.to_string()))?);
    }
    Ok(track)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_round_trip_is_exact_after_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let frames = (0..3)
            .map(|i| {
                let px = Array3::from_shape_fn((9, 11, 3), |(y, x, c)| {
                    ((x * 7 + y * 3 + c + i) % 17) as f32 / 16.0
                });
                Frame::new(px).unwrap().quantized()
            })
            .collect();
        let clip = VideoClip::new(frames, 12.5).unwrap();
        save_clip(&clip, dir.path()).unwrap();
        assert_eq!(load_clip(dir.path()).unwrap(), clip);
    }

    #[test]
    fn landmark_track_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm.txt");
        let track = vec![
            LandmarkSet::new(vec![[0.1, 2.0 / 3.0], [5.5, 1e-7]], 0, vec![0]).unwrap(),
            LandmarkSet::new(vec![[3.25, 4.0], [7.0, 8.125]], 1, vec![]).unwrap(),
        ];
        save_landmark_track(&track, &path).unwrap();
        assert_eq!(load_landmark_track(&path).unwrap(), track);
    }

    #[test]
    fn malformed_landmark_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm.txt");
        fs::write(&path, "0 2 1.0 2.0 3.0 ;\n").unwrap();
        assert!(matches!(load_landmark_track(&path), Err(Error::Malformed { .. })));
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_clip(dir.path()), Err(Error::Io { .. })));
    }
}
