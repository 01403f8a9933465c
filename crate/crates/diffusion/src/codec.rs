//! Fixed patch codec.
//!
//! Each non-overlapping `p x p x 3` patch is projected onto `channels`
//! orthonormal basis vectors, each the product of a 2-D DCT-II spatial basis
//! function and a color direction. The order is: spatial DC in the three
//! opponent color directions (intensity `(1,1,1)/sqrt 3`, `(1,0,-1)/sqrt 2`,
//! `(1,-2,1)/sqrt 6`), then intensity AC terms in zigzag order, then the two
//! chroma directions' AC terms. Coefficients are divided by `p` so latents of
//! `[0, 1]` images stay near unit scale. With all `3 p^2` channels the codec is
//! lossless.

use headswap_core::canvas::{FrameLatent, LatentTensor};
use headswap_core::media::{Frame, VideoClip};
use ndarray::{s, Array3, Array5};

use crate::error::{Error, Result};

pub const DEFAULT_PATCH: usize = 8;
pub const DEFAULT_CHANNELS: usize = 4;

const COLORS: [[f64; 3]; 3] = {
    let a = 0.577_350_269_189_625_8; // 1/sqrt 3
    let b = std::f64::consts::FRAC_1_SQRT_2;
    let c = 0.408_248_290_463_863; // 1/sqrt 6
    [[a, a, a], [b, 0.0, -b], [c, -2.0 * c, c]]
};

/// JPEG-style zigzag over a `p x p` grid as `(row frequency, column frequency)`.
fn zigzag(p: usize) -> Vec<(usize, usize)> {
    let mut order = Vec::with_capacity(p * p);
    for d in 0..(2 * p - 1) {
        let cells: Vec<(usize, usize)> = (0..=d).filter(|&u| u < p && d - u < p).map(|u| (u, d - u)).collect();
        if d % 2 == 0 {
            order.extend(cells.into_iter().rev());
        } else {
            order.extend(cells);
        }
    }
    order
}

fn dct(p: usize, freq: usize, x: usize) -> f64 {
    let alpha = if freq == 0 { (1.0 / p as f64).sqrt() } else { (2.0 / p as f64).sqrt() };
    alpha * (std::f64::consts::PI * (2 * x + 1) as f64 * freq as f64 / (2 * p) as f64).cos()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchCodec {
    patch: usize,
    channels: usize,
    /// `channels x (p * p * 3)`, row-major over `(y, x, rgb)`.
    basis: Vec<Vec<f32>>,
}

impl Default for PatchCodec {
    fn default() -> Self {
        Self::new(DEFAULT_PATCH, DEFAULT_CHANNELS).expect("default codec is valid")
    }
}

impl PatchCodec {
    pub fn new(patch: usize, channels: usize) -> Result<Self> {
        if patch == 0 {
            return Err(Error::invalid("patch size must be >= 1"));
        }
        let full = 3 * patch * patch;
        if channels < 3 || channels > full {
            return Err(Error::invalid(format!("latent channels must lie in [3, {full}] for patch {patch}")));
        }
        let zz = zigzag(patch);
        let mut terms: Vec<((usize, usize), usize)> = (0..3).map(|c| ((0, 0), c)).collect();
        for color in 0..3 {
            terms.extend(zz.iter().skip(1).map(|&f| (f, color)));
        }
        let basis = terms
            .into_iter()
            .take(channels)
            .map(|((u, v), color)| {
                let mut b = Vec::with_capacity(full);
                for y in 0..patch {
                    for x in 0..patch {
                        let spatial = dct(patch, u, y) * dct(patch, v, x);
                        b.extend(COLORS[color].iter().map(|c| (spatial * c) as f32));
                    }
                }
                b
            })
            .collect();
        Ok(Self { patch, channels, basis })
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn latent_size(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        if height % self.patch != 0 || width % self.patch != 0 {
            return Err(Error::invalid(format!(
                "frame {height}x{width} is not divisible by the patch size {}",
                self.patch
            )));
        }
        Ok((height / self.patch, width / self.patch))
    }

    /// `(C, h, w)` coefficients of one frame.
    fn encode_pixels(&self, px: &Array3<f32>) -> Result<Array3<f32>> {
        let (h, w, _) = px.dim();
        let (hl, wl) = self.latent_size(h, w)?;
        let p = self.patch;
        let scale = 1.0 / p as f32;
        let mut out = Array3::<f32>::zeros((self.channels, hl, wl));
        let mut patch = Vec::with_capacity(3 * p * p);
        for by in 0..hl {
            for bx in 0..wl {
                patch.clear();
                patch.extend(px.slice(s![by * p..(by + 1) * p, bx * p..(bx + 1) * p, ..]).iter().copied());
                for (c, b) in self.basis.iter().enumerate() {
                    let dot: f32 = b.iter().zip(&patch).map(|(u, v)| u * v).sum();
                    out[[c, by, bx]] = dot * scale;
                }
            }
        }
        Ok(out)
    }

    /// Applies the transpose; values are not clamped.
    fn decode_coeffs(&self, z: ndarray::ArrayView3<'_, f32>) -> Result<Array3<f32>> {
        let (c, hl, wl) = z.dim();
        if c != self.channels {
            return Err(Error::invalid(format!("latent has {c} channels, codec {}", self.channels)));
        }
        let p = self.patch;
        let mut px = Array3::<f32>::zeros((hl * p, wl * p, 3));
        for by in 0..hl {
            for bx in 0..wl {
                let mut block = px.slice_mut(s![by * p..(by + 1) * p, bx * p..(bx + 1) * p, ..]);
                for (k, b) in self.basis.iter().enumerate() {
                    let coef = z[[k, by, bx]] * p as f32;
                    if coef == 0.0 {
                        continue;
                    }
                    for (dst, &bv) in block.iter_mut().zip(b) {
                        *dst += coef * bv;
                    }
                }
            }
        }
        Ok(px)
    }

    pub fn encode_frame(&self, frame: &Frame) -> Result<FrameLatent> {
        let z = self.encode_pixels(frame.pixels())?;
        let (c, h, w) = z.dim();
        Ok(FrameLatent::new(z.into_shape_with_order((1, c, h, w)).expect("same size"))?)
    }

    pub fn decode_frame(&self, latent: &FrameLatent) -> Result<Frame> {
        let px = self.decode_coeffs(latent.data().index_axis(ndarray::Axis(0), 0))?;
        Ok(Frame::from_clamped(px)?)
    }

    /// `(1, C, F, h, w)` latent of a clip.
    pub fn encode_clip(&self, clip: &VideoClip) -> Result<LatentTensor> {
        let (h, w) = self.latent_size(clip.height(), clip.width())?;
        let mut out = Array5::<f32>::zeros((1, self.channels, clip.len(), h, w));
        for (t, f) in clip.frames().iter().enumerate() {
            out.slice_mut(s![0, .., t, .., ..]).assign(&self.encode_pixels(f.pixels())?);
        }
        Ok(LatentTensor::new(out)?)
    }

    /// Decodes batch item `b` of a `(B, C, F, h, w)` latent into a clip.
    pub fn decode_clip(&self, latent: &LatentTensor, b: usize, fps: f32) -> Result<VideoClip> {
        if b >= latent.batch() {
            return Err(Error::invalid(format!("batch item {b} of {}", latent.batch())));
        }
        let frames = (0..latent.frames())
            .map(|t| {
                let z = latent.data().slice(s![b, .., t, .., ..]);
                Ok(Frame::from_clamped(self.decode_coeffs(z)?)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(VideoClip::new(frames, fps)?)
    }
}
