//! Dual-canvas conditioning latents.
//!
//! The driving-video latent (the motion canvas) and a frame-replicated
//! reference latent (the identity canvas) sit side by side along the width
//! axis. A binary mask marks the motion canvas with ones and the identity
//! canvas with zeros.

use ndarray::{concatenate, s, Array4, Array5, ArrayView5, Axis};

use crate::error::{Error, Result};

/// Five-axis latent laid out as `(batch, channel, frame, height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    data: Array5<f32>,
}

impl LatentTensor {
    pub fn new(data: Array5<f32>) -> Result<Self> {
        if data.shape().iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!(
                "latent dimensions must be positive, got {:?}",
                data.shape()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("latent contains non-finite values"));
        }
        Ok(Self { data })
    }

    pub fn zeros(shape: (usize, usize, usize, usize, usize)) -> Result<Self> {
        Self::new(Array5::zeros(shape))
    }

    pub fn data(&self) -> &Array5<f32> {
        &self.data
    }

    pub fn view(&self) -> ArrayView5<'_, f32> {
        self.data.view()
    }

    pub fn into_data(self) -> Array5<f32> {
        self.data
    }

    /// `(batch, channels, frames, height, width)`.
    pub fn dims(&self) -> (usize, usize, usize, usize, usize) {
        self.data.dim()
    }

    pub fn batch(&self) -> usize {
        self.dims().0
    }

    pub fn channels(&self) -> usize {
        self.dims().1
    }

    pub fn frames(&self) -> usize {
        self.dims().2
    }

    pub fn height(&self) -> usize {
        self.dims().3
    }

    pub fn width(&self) -> usize {
        self.dims().4
    }

    /// Columns `[start, end)` along the width axis.
    pub fn columns(&self, start: usize, end: usize) -> LatentTensor {
        LatentTensor {
            data: self.data.slice(s![.., .., .., .., start..end]).to_owned(),
        }
    }

    /// Stacks latents along the batch axis.
    pub fn stack(parts: &[LatentTensor]) -> Result<LatentTensor> {
        let views: Vec<_> = parts.iter().map(|p| p.data.view()).collect();
        let data = concatenate(Axis(0), &views)
            .map_err(|e| Error::shape(format!("stacking latents: {e}")))?;
        LatentTensor::new(data)
    }

    /// Element `b` of the batch, keeping the batch axis.
    pub fn batch_item(&self, b: usize) -> LatentTensor {
        LatentTensor {
            data: self.data.slice(s![b..b + 1, .., .., .., ..]).to_owned(),
        }
    }
}

/// Reference latent without a frame axis: `(batch, channel, height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLatent {
    data: Array4<f32>,
}

impl FrameLatent {
    pub fn new(data: Array4<f32>) -> Result<Self> {
        if data.shape().iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!(
                "latent dimensions must be positive, got {:?}",
                data.shape()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("latent contains non-finite values"));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array4<f32> {
        &self.data
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.data.dim()
    }

    /// Replicates the latent across `frames` frames.
    pub fn repeat_frames(&self, frames: usize) -> LatentTensor {
        let (b, c, h, w) = self.dims();
        let data = self
            .data
            .view()
            .insert_axis(Axis(2))
            .broadcast((b, c, frames, h, w))
            .expect("broadcast along a new unit axis")
            .to_owned();
        LatentTensor { data }
    }
}

/// Conditioning latent plus its binary region mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningCanvas {
    pub z_cond: LatentTensor,
    /// `(batch, 1, frames, height, 2 * width)`: ones on the motion canvas, zeros on the identity canvas.
    pub m_cond: Array5<f32>,
}

impl ConditioningCanvas {
    /// Width of one canvas half.
    pub fn half_width(&self) -> usize {
        self.z_cond.width() / 2
    }
}

/// The region mask for a canvas of the given size. Depends only on shape.
pub fn canvas_mask(batch: usize, frames: usize, height: usize, half_width: usize) -> Array5<f32> {
    Array5::from_shape_fn((batch, 1, frames, height, 2 * half_width), |(_, _, _, _, x)| {
        if x < half_width {
            1.0
        } else {
            0.0
        }
    })
}

/// Concatenates the motion latent with the frame-replicated reference latent along width.
pub fn build_canvas(z_t: &LatentTensor, z_r: &FrameLatent) -> Result<ConditioningCanvas> {
    let (b, c, f, h, w) = z_t.dims();
    let (rb, rc, rh, rw) = z_r.dims();
    if (b, c, h, w) != (rb, rc, rh, rw) {
        return Err(Error::shape(format!(
            "build_canvas: motion latent (B,C,H,W) = {:?}, reference latent = {:?}",
            (b, c, h, w),
            (rb, rc, rh, rw)
        )));
    }
    let identity = z_r.repeat_frames(f);
    let data = concatenate(Axis(4), &[z_t.view(), identity.view()]).expect("shapes agree");
    Ok(ConditioningCanvas {
        z_cond: LatentTensor { data },
        m_cond: canvas_mask(b, f, h, w),
    })
}

/// Inverse of [`build_canvas`]: returns the motion and identity halves.
pub fn split_canvas(canvas: &LatentTensor) -> Result<(LatentTensor, LatentTensor)> {
    let w2 = canvas.width();
    if w2 % 2 != 0 {
        return Err(Error::invalid(format!("canvas width {w2} is odd")));
    }
    let w = w2 / 2;
    Ok((canvas.columns(0, w), canvas.columns(w, w2)))
}

/// Overwrites the identity half of `state` with `clean_identity`, leaving the motion half untouched.
pub fn clamp_identity(state: &LatentTensor, clean_identity: &LatentTensor) -> Result<LatentTensor> {
    let (b, c, f, h, w2) = state.dims();
    let (ib, ic, iff, ih, iw) = clean_identity.dims();
    if (b, c, f, h) != (ib, ic, iff, ih) || w2 != 2 * iw {
        return Err(Error::shape(format!(
            "clamp_identity: state {:?} vs identity {:?}",
            state.dims(),
            clean_identity.dims()
        )));
    }
    let mut out = state.data.clone();
    out.slice_mut(s![.., .., .., .., iw..w2])
        .assign(&clean_identity.data);
    Ok(LatentTensor { data: out })
}
