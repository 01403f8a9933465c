//! Dual-canvas DDIM sampling with the identity canvas clamped after every step.

use headswap_core::canvas::{clamp_identity, split_canvas, LatentTensor};
use headswap_core::media::{Frame, VideoClip};
use ndarray::{s, Array5};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::train::{denoiser_input, TrainingState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOptions {
    pub steps: usize,
    /// `1.0` starts from pure noise; below 1 starts from `encode(v_d)` noised to
    /// `strength * (T - 1)`.
    pub strength: f64,
    pub seed: u64,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            steps: 50,
            strength: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub clip: VideoClip,
    /// Final full canvas `(1, C, F, h, 2w)`.
    pub canvas: LatentTensor,
    /// Predictions that had to be zeroed because they were not finite.
    pub nonfinite_predictions: usize,
}

/// Called after each clamped step with `(step index, timestep, canvas)`.
pub type StepHook<'a> = &'a mut dyn FnMut(usize, usize, &LatentTensor);

pub fn sample(
    state: &TrainingState,
    v_d: &VideoClip,
    i_b: &Frame,
    opts: &SampleOptions,
    mut hook: Option<StepHook<'_>>,
) -> Result<SampleOutput> {
    let cfg = state.model.config();
    if v_d.len() != cfg.frames_per_clip {
        return Err(Error::invalid(format!(
            "driving clip has {} frames, the denoiser was built for {}",
            v_d.len(),
            cfg.frames_per_clip
        )));
    }
    if i_b.shape() != (v_d.height(), v_d.width()) {
        return Err(Error::invalid(format!(
            "reference frame {:?} does not match driving frames {:?}",
            i_b.shape(),
            (v_d.height(), v_d.width())
        )));
    }
    if state.step == 0 {
        log::warn!("sampling with an untrained denoiser; the output will be noise-like");
    }
    let codec = &state.codec;
    let driving = codec.encode_clip(v_d)?;
    let reference = codec.encode_frame(i_b)?;
    let identity = reference.repeat_frames(v_d.len());
    let timesteps = state.schedule.inference_timesteps(opts.steps, opts.strength)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let noise = Array5::from_shape_simple_fn(driving.dims(), || StandardNormal.sample(&mut rng));
    let motion = if opts.strength >= 1.0 {
        LatentTensor::new(noise)?
    } else {
        state.schedule.add_noise(&driving, timesteps[0], &LatentTensor::new(noise)?)?
    };
    let mut canvas = headswap_core::canvas::build_canvas(&motion, &reference)?.z_cond;
    let mut nonfinite = 0;
    for (i, &t) in timesteps.iter().enumerate() {
        let (motion, _) = split_canvas(&canvas)?;
        let input = denoiser_input(cfg, &motion, &driving, &reference)?;
        let mut eps = state.model.predict(&input, &[t])?;
        eps.iter_mut().filter(|v| !v.is_finite()).for_each(|v| {
            *v = 0.0;
            nonfinite += 1;
        });
        let next = timesteps.get(i + 1).copied();
        canvas = state.schedule.ddim_step(&canvas, &LatentTensor::new(eps)?, t, next)?;
        canvas = clamp_identity(&canvas, &identity)?;
        if let Some(h) = hook.as_mut() {
            h(i, t, &canvas);
        }
    }
    if nonfinite > 0 {
        log::warn!("{nonfinite} non-finite noise predictions were replaced by zero");
    }
    let half = canvas.width() / 2;
    let motion = LatentTensor::new(canvas.data().slice(s![.., .., .., .., ..half]).to_owned())?;
    Ok(SampleOutput {
        clip: codec.decode_clip(&motion, 0, v_d.fps())?,
        canvas,
        nonfinite_predictions: nonfinite,
    })
}
