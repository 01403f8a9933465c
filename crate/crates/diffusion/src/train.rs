//! MEAR-weighted noise-prediction training on dual canvases.
//!
//! The motion canvas of the ground-truth latent is noised; the identity canvas
//! keeps the clean reference latent. The loss only covers the motion canvas.

use std::io::Write;
use std::time::Instant;

use candle_core::Tensor;
use headswap_core::canvas::{build_canvas, FrameLatent, LatentTensor};
use headswap_core::mear::{compute_maps, pixel_weights, to_latent_weights, MearConfig};
use headswap_core::pipeline::PairedSample;
use headswap_core::seed;
use ndarray::{concatenate, s, Array3, Array5, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::codec::PatchCodec;
use crate::error::{Error, Result};
use crate::model::{to_tensor, Denoiser, DenoiserConfig};
use crate::optim::{Adam, AdamConfig};
use crate::schedule::NoiseSchedule;

/// One pre-encoded training tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub id: String,
    /// Encoded ground truth `V_a`, `(1, C, F, h, w)`.
    pub target: LatentTensor,
    /// Encoded driving clip `V_d`.
    pub driving: LatentTensor,
    /// Encoded reference frame `I_b`, `(1, C, h, w)`.
    pub identity: FrameLatent,
    /// Loss weights `1 + lambda * A` at latent resolution, `(F, h, w)`.
    pub weights: Array3<f32>,
}

pub fn prepare_item(sample: &PairedSample, codec: &PatchCodec, mear: &MearConfig) -> Result<TrainItem> {
    sample.validate()?;
    let target = codec.encode_clip(&sample.v_a)?;
    let (_, _, f, h, w) = target.dims();
    let maps = compute_maps(&sample.v_a, &sample.landmarks_a, mear)?;
    let a = to_latent_weights(&maps.fused, (f, h, w))?;
    let weights = pixel_weights(&a.weights.mapv(f64::from), mear.weight_floor_lambda).mapv(|v| v as f32);
    Ok(TrainItem {
        id: sample.id.clone(),
        driving: codec.encode_clip(&sample.v_d)?,
        identity: codec.encode_frame(&sample.i_b)?,
        target,
        weights,
    })
}

/// Encodes samples and computes their weight maps in parallel.
pub fn prepare_items(samples: &[PairedSample], codec: &PatchCodec, mear: &MearConfig) -> Result<Vec<TrainItem>> {
    mear.validate()?;
    samples
        .par_iter()
        .map(|s| prepare_item(s, codec, mear).map_err(|e| match e {
            Error::Core(c) => Error::Core(c.in_clip(&s.id)),
            other => other,
        }))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 2,
            adam: AdamConfig::default(),
        }
    }
}

/// Everything needed to continue training or to sample.
#[derive(Debug)]
pub struct TrainingState {
    pub model: Denoiser,
    pub optimizer: Adam,
    pub schedule: NoiseSchedule,
    pub codec: PatchCodec,
    pub train: TrainConfig,
    /// Completed optimizer steps.
    pub step: u64,
    pub seed: u64,
}

impl TrainingState {
    pub fn new(
        model: DenoiserConfig,
        codec: PatchCodec,
        schedule: NoiseSchedule,
        train: TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        if model.latent_channels != codec.channels() {
            return Err(Error::invalid(format!(
                "denoiser has {} latent channels, codec {}",
                model.latent_channels,
                codec.channels()
            )));
        }
        if train.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        let model = Denoiser::new(model, seed::derive(seed, "init"))?;
        let optimizer = Adam::new(train.adam, model.params())?;
        Ok(Self {
            model,
            optimizer,
            schedule,
            codec,
            train,
            step: 0,
            seed,
        })
    }
}

/// Random draws of one step: which items, their timesteps and the noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub timesteps: Vec<usize>,
    /// `(B, C, F, h, w)` noise on the motion canvas.
    pub eps: Array5<f32>,
}

pub fn draw_batch(state: &TrainingState, items: &[TrainItem]) -> Result<Batch> {
    let first = items.first().ok_or_else(|| Error::invalid("empty training batch"))?;
    let b = state.train.batch_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_indexed(state.seed, "batch", state.step));
    let indices = if b <= items.len() {
        index::sample(&mut rng, items.len(), b).into_vec()
    } else {
        (0..b).map(|_| rng.gen_range(0..items.len())).collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_indexed(state.seed, "noise", state.step));
    let timesteps = (0..b).map(|_| rng.gen_range(0..state.schedule.num_steps())).collect();
    let (_, c, f, h, w) = first.target.dims();
    let eps = Array5::from_shape_simple_fn((b, c, f, h, w), || StandardNormal.sample(&mut rng));
    Ok(Batch {
        indices,
        timesteps,
        eps,
    })
}

/// Stacks `[state canvas, driving canvas (optional), region mask]` along channels.
pub(crate) fn denoiser_input(
    cfg: &DenoiserConfig,
    motion: &LatentTensor,
    driving: &LatentTensor,
    identity: &FrameLatent,
) -> Result<Array5<f32>> {
    let state = build_canvas(motion, identity)?;
    let cond = build_canvas(driving, identity)?;
    let mut parts = vec![state.z_cond.view()];
    if cfg.driving_condition {
        parts.push(cond.z_cond.view());
    }
    parts.push(cond.m_cond.view());
    Ok(concatenate(Axis(1), &parts).expect("canvases share B, F, H, W"))
}

fn check_item(cfg: &DenoiserConfig, item: &TrainItem) -> Result<()> {
    let (_, c, f, h, w) = item.target.dims();
    if c != cfg.latent_channels || f != cfg.frames_per_clip {
        return Err(Error::invalid(format!(
            "item `{}` has {c} channels and {f} frames; the denoiser expects {} and {}",
            item.id, cfg.latent_channels, cfg.frames_per_clip
        )));
    }
    if item.driving.dims() != item.target.dims() || item.weights.dim() != (f, h, w) {
        return Err(Error::invalid(format!("item `{}` has inconsistent shapes", item.id)));
    }
    Ok(())
}

/// Forward pass for a drawn batch. Returns the loss tensor and the full-canvas prediction.
pub fn batch_loss(state: &TrainingState, items: &[TrainItem], batch: &Batch) -> Result<(Tensor, Tensor)> {
    let cfg = state.model.config();
    let mut inputs = Vec::with_capacity(batch.indices.len());
    let mut weights = Vec::with_capacity(batch.indices.len());
    for (k, (&i, &t)) in batch.indices.iter().zip(&batch.timesteps).enumerate() {
        let item = &items[i];
        check_item(cfg, item)?;
        let eps = batch.eps.slice(s![k..k + 1, .., .., .., ..]).to_owned();
        let noisy = LatentTensor::new(state.schedule.add_noise_array(item.target.data(), t, &eps)?)?;
        inputs.push(denoiser_input(cfg, &noisy, &item.driving, &item.identity)?);
        weights.push(item.weights.view());
    }
    let views: Vec<_> = inputs.iter().map(|a| a.view()).collect();
    let input = concatenate(Axis(0), &views).expect("items share a shape");
    let w = ndarray::stack(Axis(0), &weights).expect("weights share a shape").insert_axis(Axis(1));
    let den = w.iter().map(|&v| f64::from(v)).sum::<f64>() * cfg.latent_channels as f64;
    if den <= 0.0 {
        return Err(Error::invalid("loss weights sum to zero"));
    }
    let pred = state.model.forward(&to_tensor(&input)?, &batch.timesteps)?;
    let w = to_tensor(&w.as_standard_layout().to_owned())?;
    let loss = motion_loss(&pred, &to_tensor(&batch.eps)?, &w, den)?;
    Ok((loss, pred))
}

/// `sum(w * (pred_motion - eps)^2) / den` over the motion half of `pred`.
pub fn motion_loss(pred: &Tensor, eps: &Tensor, w: &Tensor, den: f64) -> Result<Tensor> {
    let half = eps.dim(4)?;
    let sq = (pred.narrow(4, 0, half)? - eps)?.sqr()?;
    Ok(sq.broadcast_mul(w)?.sum_all()?.affine(1.0 / den, 0.0)?)
}

/// One optimizer update; returns the loss before the update.
pub fn train_step(state: &mut TrainingState, items: &[TrainItem]) -> Result<f64> {
    let batch = draw_batch(state, items)?;
    let (loss, _) = batch_loss(state, items, &batch)?;
    let value = f64::from(loss.to_scalar::<f32>()?);
    if !value.is_finite() {
        return Err(Error::invalid(format!("loss became non-finite at step {}", state.step)));
    }
    let grads = loss.backward()?;
    state.optimizer.step(state.model.params(), &grads)?;
    state.step += 1;
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    /// 1-based step index.
    pub step: u64,
    pub loss: f64,
    pub wall_clock_s: f64,
}

impl LossRecord {
    pub fn to_line(&self) -> String {
        format!("{},{:.8e},{:.3}", self.step, self.loss, self.wall_clock_s)
    }
}

/// Runs `steps` updates, appending `step,loss,wall_clock_s` lines to `log`.
pub fn train(
    state: &mut TrainingState,
    items: &[TrainItem],
    steps: u64,
    mut log: Option<&mut dyn Write>,
) -> Result<Vec<LossRecord>> {
    let start = Instant::now();
    let mut records = Vec::with_capacity(steps as usize);
    for _ in 0..steps {
        let loss = train_step(state, items)?;
        let rec = LossRecord {
            step: state.step,
            loss,
            wall_clock_s: start.elapsed().as_secs_f64(),
        };
        if let Some(w) = log.as_mut() {
            writeln!(w, "{}", rec.to_line()).map_err(|e| Error::Io {
                path: "training log".into(),
                source: e,
            })?;
        }
        log::debug!("step {} loss {:.5}", rec.step, rec.loss);
        records.push(rec);
    }
    Ok(records)
}

/// Trailing moving average with window `k`.
pub fn smoothed(losses: &[f64], k: usize) -> Vec<f64> {
    let k = k.max(1);
    (0..losses.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(k);
            losses[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}
