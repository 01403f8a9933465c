//! The denoiser: a per-frame U-Net with frame-axis attention blocks.
//!
//! Input is `(B, C_in, F, H, 2W)`, frames are folded into the batch for every
//! spatial layer and unfolded for temporal attention, which mixes features of
//! one spatial location across frames only.

use candle_core::{DType, Device, Tensor, Var, D};
use ndarray::Array5;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub latent_channels: usize,
    pub base_width: usize,
    pub depth: usize,
    pub temporal_attention: bool,
    pub frames_per_clip: usize,
    /// Feed the encoded driving canvas as extra input channels.
    pub driving_condition: bool,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            latent_channels: 4,
            base_width: 64,
            depth: 3,
            temporal_attention: true,
            frames_per_clip: 8,
            driving_condition: true,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames_per_clip < 2 {
            return Err(Error::invalid("frames_per_clip must be >= 2"));
        }
        if self.depth < 1 {
            return Err(Error::invalid("depth must be >= 1"));
        }
        if self.latent_channels == 0 || self.base_width == 0 {
            return Err(Error::invalid("latent_channels and base_width must be positive"));
        }
        Ok(())
    }

    /// State canvas, optional driving canvas, then the region mask.
    pub fn input_channels(&self) -> usize {
        let c = self.latent_channels;
        if self.driving_condition {
            2 * c + 1
        } else {
            c + 1
        }
    }

    fn widths(&self) -> Vec<usize> {
        (0..self.depth)
            .map(|i| self.base_width * if i == 0 { 1 } else { 2 })
            .collect()
    }

    /// Spatial sizes must survive `depth - 1` halvings.
    pub fn check_spatial(&self, height: usize, width: usize) -> Result<()> {
        let k = 1usize << (self.depth - 1);
        if height % k != 0 || width % k != 0 {
            return Err(Error::invalid(format!(
                "latent canvas {height}x{width} is not divisible by {k} (depth {})",
                self.depth
            )));
        }
        Ok(())
    }
}

/// Named trainable tensors in creation order.
#[derive(Debug, Default)]
pub struct ParamStore {
    entries: Vec<(String, Var)>,
}

impl ParamStore {
    fn uniform(&mut self, rng: &mut ChaCha8Rng, name: String, shape: &[usize], bound: f32) -> Result<Tensor> {
        let n = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.push(name, data, shape)
    }

    fn constant(&mut self, name: String, shape: &[usize], value: f32) -> Result<Tensor> {
        self.push(name, vec![value; shape.iter().product()], shape)
    }

    fn push(&mut self, name: String, data: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        let var = Var::from_vec(data, shape, &Device::Cpu)?;
        let t = var.as_tensor().clone();
        self.entries.push((name, var));
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn vars(&self) -> impl Iterator<Item = &Var> {
        self.entries.iter().map(|(_, v)| v)
    }

    pub fn names_and_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.entries
            .iter()
            .map(|(n, v)| (n.clone(), v.as_tensor().dims().to_vec()))
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.as_tensor().elem_count()).sum()
    }

    pub fn values(&self) -> Result<Vec<Vec<f32>>> {
        self.entries
            .iter()
            .map(|(_, v)| Ok(v.as_tensor().flatten_all()?.to_vec1::<f32>()?))
            .collect()
    }

    pub fn set_values(&self, values: &[Vec<f32>]) -> Result<()> {
        if values.len() != self.entries.len() {
            return Err(Error::invalid(format!(
                "{} parameter tensors for a model with {}",
                values.len(),
                self.entries.len()
            )));
        }
        for ((name, var), data) in self.entries.iter().zip(values) {
            let dims = var.as_tensor().dims().to_vec();
            if data.len() != var.as_tensor().elem_count() {
                return Err(Error::invalid(format!("parameter {name}: {} values for shape {dims:?}", data.len())));
            }
            var.set(&Tensor::from_vec(data.clone(), dims, &Device::Cpu)?)?;
        }
        Ok(())
    }
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Builder<'_> {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Result<Conv> {
        self.conv_scaled(name, cin, cout, k, 1.0)
    }

    fn conv_scaled(&mut self, name: &str, cin: usize, cout: usize, k: usize, gain: f32) -> Result<Conv> {
        let bound = gain / ((cin * k * k) as f32).sqrt();
        Ok(Conv {
            w: self.store.uniform(&mut self.rng, format!("{name}.w"), &[cout, cin, k, k], bound)?,
            b: self.store.constant(format!("{name}.b"), &[cout], 0.0)?,
            pad: k / 2,
            stride: 1,
        })
    }

    fn linear(&mut self, name: &str, cin: usize, cout: usize) -> Result<Linear> {
        Ok(Linear {
            w: self.store.uniform(&mut self.rng, format!("{name}.w"), &[cin, cout], 1.0 / (cin as f32).sqrt())?,
            b: self.store.constant(format!("{name}.b"), &[cout], 0.0)?,
        })
    }

    fn norm(&mut self, name: &str, ch: usize) -> Result<Norm> {
        Ok(Norm {
            gamma: self.store.constant(format!("{name}.gamma"), &[ch], 1.0)?,
            beta: self.store.constant(format!("{name}.beta"), &[ch], 0.0)?,
            groups: (1..=8.min(ch)).rev().find(|g| ch % g == 0).unwrap_or(1),
        })
    }

    fn res(&mut self, name: &str, cin: usize, cout: usize, tdim: usize) -> Result<ResBlock> {
        Ok(ResBlock {
            norm1: self.norm(&format!("{name}.norm1"), cin)?,
            conv1: self.conv(&format!("{name}.conv1"), cin, cout, 3)?,
            time: self.linear(&format!("{name}.time"), tdim, cout)?,
            norm2: self.norm(&format!("{name}.norm2"), cout)?,
            conv2: self.conv(&format!("{name}.conv2"), cout, cout, 3)?,
            skip: if cin == cout {
                None
            } else {
                Some(self.conv(&format!("{name}.skip"), cin, cout, 1)?)
            },
        })
    }

    fn attention(&mut self, name: &str, ch: usize) -> Result<Attention> {
        Ok(Attention {
            norm_gamma: self.store.constant(format!("{name}.ln.gamma"), &[ch], 1.0)?,
            norm_beta: self.store.constant(format!("{name}.ln.beta"), &[ch], 0.0)?,
            q: self.linear(&format!("{name}.q"), ch, ch)?,
            k: self.linear(&format!("{name}.k"), ch, ch)?,
            v: self.linear(&format!("{name}.v"), ch, ch)?,
            out: self.linear(&format!("{name}.out"), ch, ch)?,
        })
    }
}

struct Conv {
    w: Tensor,
    b: Tensor,
    pad: usize,
    stride: usize,
}

impl Conv {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.w, self.pad, self.stride, 1, 1)?;
        let c = self.b.dim(0)?;
        Ok(y.broadcast_add(&self.b.reshape((1, c, 1, 1))?)?)
    }
}

struct Linear {
    w: Tensor,
    b: Tensor,
}

impl Linear {
    /// Applies to the last axis of a 2-D or 3-D input.
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let cin = *dims.last().expect("non-scalar input");
        let rows = x.elem_count() / cin;
        let y = x.reshape((rows, cin))?.matmul(&self.w)?.broadcast_add(&self.b)?;
        let mut out = dims;
        *out.last_mut().expect("non-scalar") = self.w.dim(1)?;
        Ok(y.reshape(out)?)
    }
}

struct Norm {
    gamma: Tensor,
    beta: Tensor,
    groups: usize,
}

impl Norm {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let g = self.groups;
        let xg = x.reshape((n, g, (c / g) * h * w))?;
        let xc = xg.broadcast_sub(&xg.mean_keepdim(2)?)?;
        let var = xc.sqr()?.mean_keepdim(2)?;
        let xn = xc.broadcast_div(&var.affine(1.0, 1e-5)?.sqrt()?)?.reshape((n, c, h, w))?;
        Ok(xn
            .broadcast_mul(&self.gamma.reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.beta.reshape((1, c, 1, 1))?)?)
    }
}

struct ResBlock {
    norm1: Norm,
    conv1: Conv,
    time: Linear,
    norm2: Norm,
    conv2: Conv,
    skip: Option<Conv>,
}

impl ResBlock {
    fn forward(&self, x: &Tensor, temb: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(&self.norm1.forward(x)?.silu()?)?;
        let (n, c, ..) = h.dims4()?;
        let h = h.broadcast_add(&self.time.forward(temb)?.reshape((n, c, 1, 1))?)?;
        let h = self.conv2.forward(&self.norm2.forward(&h)?.silu()?)?;
        let skip = match &self.skip {
            Some(s) => s.forward(x)?,
            None => x.clone(),
        };
        Ok((h + skip)?)
    }
}

/// Single-head pre-norm self-attention over `(N, L, ch)` token sequences.
struct Attention {
    norm_gamma: Tensor,
    norm_beta: Tensor,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
}

impl Attention {
    fn forward(&self, tokens: &Tensor, pos: Option<&Tensor>) -> Result<Tensor> {
        let ch = tokens.dim(D::Minus1)?;
        let xc = tokens.broadcast_sub(&tokens.mean_keepdim(D::Minus1)?)?;
        let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
        let mut xn = xc
            .broadcast_div(&var.affine(1.0, 1e-5)?.sqrt()?)?
            .broadcast_mul(&self.norm_gamma)?
            .broadcast_add(&self.norm_beta)?;
        if let Some(p) = pos {
            xn = xn.broadcast_add(p)?;
        }
        let q = self.q.forward(&xn)?;
        let k = self.k.forward(&xn)?;
        let v = self.v.forward(&xn)?;
        let scores = q.matmul(&k.t()?.contiguous()?)?.affine(1.0 / (ch as f64).sqrt(), 0.0)?;
        let shifted = scores.broadcast_sub(&scores.max_keepdim(D::Minus1)?.detach())?.exp()?;
        let attn = shifted.broadcast_div(&shifted.sum_keepdim(D::Minus1)?)?;
        Ok((tokens + self.out.forward(&attn.matmul(&v)?)?)?)
    }
}

fn sinusoid(position: f64, dim: usize) -> Vec<f32> {
    let half = dim / 2;
    let mut out = vec![0.0f32; dim];
    for i in 0..half {
        let freq = (-(10_000f64).ln() * i as f64 / half.max(1) as f64).exp();
        out[i] = (position * freq).sin() as f32;
        out[half + i] = (position * freq).cos() as f32;
    }
    out
}

struct Level {
    res_down: ResBlock,
    attn_down: Option<Attention>,
    down: Option<Conv>,
    res_up: ResBlock,
    attn_up: Option<Attention>,
    /// Upsamples to the next shallower level's width.
    up: Option<Conv>,
}

pub struct Denoiser {
    config: DenoiserConfig,
    params: ParamStore,
    time1: Linear,
    time2: Linear,
    conv_in: Conv,
    levels: Vec<Level>,
    mid: ResBlock,
    mid_attn: Attention,
    out_norm: Norm,
    conv_out: Conv,
}

impl std::fmt::Debug for Denoiser {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Denoiser")
            .field("config", &self.config)
            .field("parameters", &self.params.num_scalars())
            .finish()
    }
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::default();
        let mut b = Builder {
            store: &mut params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let widths = config.widths();
        let w0 = config.base_width;
        let tdim = 2 * w0;
        let time1 = b.linear("time.0", w0, tdim)?;
        let time2 = b.linear("time.1", tdim, tdim)?;
        let conv_in = b.conv("conv_in", config.input_channels(), w0, 3)?;
        let mut levels = Vec::with_capacity(config.depth);
        let deepest = widths[config.depth - 1];
        let mut prev = w0;
        for (i, &ch) in widths.iter().enumerate() {
            let attn = |b: &mut Builder, dir: &str| -> Result<Option<Attention>> {
                config
                    .temporal_attention
                    .then(|| b.attention(&format!("level{i}.{dir}.temporal"), ch))
                    .transpose()
            };
            let last = i + 1 == config.depth;
            let res_down = b.res(&format!("level{i}.down.res"), prev, ch, tdim)?;
            let attn_down = attn(&mut b, "down")?;
            let down = if last {
                None
            } else {
                let mut c = b.conv(&format!("level{i}.down.conv"), ch, ch, 3)?;
                c.stride = 2;
                Some(c)
            };
            let res_up = b.res(&format!("level{i}.up.res"), 2 * ch, ch, tdim)?;
            let attn_up = attn(&mut b, "up")?;
            let up = if i == 0 {
                None
            } else {
                Some(b.conv(&format!("level{i}.up.conv"), ch, widths[i - 1], 3)?)
            };
            levels.push(Level {
                res_down,
                attn_down,
                down,
                res_up,
                attn_up,
                up,
            });
            prev = ch;
        }
        let mid = b.res("mid.res", deepest, deepest, tdim)?;
        let mid_attn = b.attention("mid.spatial", deepest)?;
        let out_norm = b.norm("out.norm", w0)?;
        // Near-zero output at init keeps the first loss close to E[eps^2].
        let conv_out = b.conv_scaled("out.conv", w0, config.latent_channels, 3, 0.1)?;
        Ok(Self {
            config,
            params,
            time1,
            time2,
            conv_in,
            levels,
            mid,
            mid_attn,
            out_norm,
            conv_out,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    fn check_input(&self, dims: &[usize], timesteps: &[usize]) -> Result<()> {
        let &[b, cin, f, h, w2] = dims else {
            return Err(Error::invalid(format!("denoiser input must be 5-D, got {dims:?}")));
        };
        if cin != self.config.input_channels() {
            return Err(Error::invalid(format!(
                "denoiser expects {} input channels, got {cin}",
                self.config.input_channels()
            )));
        }
        if timesteps.len() != b {
            return Err(Error::invalid(format!("{} timesteps for batch {b}", timesteps.len())));
        }
        if f == 0 || w2 % 2 != 0 {
            return Err(Error::invalid(format!("canvas width {w2} must be even and frames positive")));
        }
        self.config.check_spatial(h, w2)
    }

    fn temporal(&self, attn: &Attention, x: &Tensor, b: usize, f: usize) -> Result<Tensor> {
        let (_, ch, h, w) = x.dims4()?;
        let tokens = x
            .reshape((b, f, ch, h, w))?
            .permute((0, 3, 4, 1, 2))?
            .contiguous()?
            .reshape((b * h * w, f, ch))?;
        let pe: Vec<f32> = (0..f).flat_map(|i| sinusoid(i as f64, ch)).collect();
        let pe = Tensor::from_vec(pe, (1, f, ch), &Device::Cpu)?;
        let out = attn.forward(&tokens, Some(&pe))?;
        Ok(out
            .reshape((b, h, w, f, ch))?
            .permute((0, 3, 4, 1, 2))?
            .contiguous()?
            .reshape((b * f, ch, h, w))?)
    }

    fn spatial(&self, attn: &Attention, x: &Tensor) -> Result<Tensor> {
        let (n, ch, h, w) = x.dims4()?;
        let tokens = x.reshape((n, ch, h * w))?.transpose(1, 2)?.contiguous()?;
        let out = attn.forward(&tokens, None)?;
        Ok(out.transpose(1, 2)?.contiguous()?.reshape((n, ch, h, w))?)
    }

    /// Predicted noise `(B, C, F, H, 2W)` for input `(B, C_in, F, H, 2W)`.
    pub fn forward(&self, input: &Tensor, timesteps: &[usize]) -> Result<Tensor> {
        self.check_input(input.dims(), timesteps)?;
        let (b, cin, f, h, w2) = input.dims5()?;
        let x = input.permute((0, 2, 1, 3, 4))?.contiguous()?.reshape((b * f, cin, h, w2))?;

        let w0 = self.config.base_width;
        let temb: Vec<f32> = timesteps
            .iter()
            .flat_map(|&t| std::iter::repeat(sinusoid(t as f64, w0)).take(f).flatten())
            .collect();
        let temb = Tensor::from_vec(temb, (b * f, w0), &Device::Cpu)?;
        let temb = self.time2.forward(&self.time1.forward(&temb)?.silu()?)?.silu()?;

        let mut hcur = self.conv_in.forward(&x)?;
        let mut skips = Vec::with_capacity(self.levels.len());
        for level in &self.levels {
            hcur = level.res_down.forward(&hcur, &temb)?;
            if let Some(a) = &level.attn_down {
                hcur = self.temporal(a, &hcur, b, f)?;
            }
            skips.push(hcur.clone());
            if let Some(d) = &level.down {
                hcur = d.forward(&hcur)?;
            }
        }
        hcur = self.mid.forward(&hcur, &temb)?;
        hcur = self.spatial(&self.mid_attn, &hcur)?;
        for (level, skip) in self.levels.iter().zip(skips).rev() {
            hcur = level.res_up.forward(&Tensor::cat(&[&hcur, &skip], 1)?, &temb)?;
            if let Some(a) = &level.attn_up {
                hcur = self.temporal(a, &hcur, b, f)?;
            }
            if let Some(u) = &level.up {
                let (_, _, hh, ww) = hcur.dims4()?;
                hcur = u.forward(&hcur.upsample_nearest2d(2 * hh, 2 * ww)?)?;
            }
        }
        let out = self.conv_out.forward(&self.out_norm.forward(&hcur)?.silu()?)?;
        let c = self.config.latent_channels;
        Ok(out.reshape((b, f, c, h, w2))?.permute((0, 2, 1, 3, 4))?.contiguous()?)
    }

    /// [`Denoiser::forward`] on host arrays, without building a gradient graph.
    pub fn predict(&self, input: &Array5<f32>, timesteps: &[usize]) -> Result<Array5<f32>> {
        let out = self.forward(&to_tensor(input)?, timesteps)?.detach();
        from_tensor(&out)
    }
}

pub fn to_tensor(a: &Array5<f32>) -> Result<Tensor> {
    let shape = a.shape().to_vec();
    let data: Vec<f32> = a.iter().copied().collect();
    Ok(Tensor::from_vec(data, shape, &Device::Cpu)?)
}

pub fn from_tensor(t: &Tensor) -> Result<Array5<f32>> {
    let (b, c, f, h, w) = t.dims5()?;
    let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    Ok(Array5::from_shape_vec((b, c, f, h, w), data).expect("element count matches dims"))
}
