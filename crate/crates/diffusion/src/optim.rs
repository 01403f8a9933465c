//! Adam with global-norm gradient clipping, kept on the host.

use candle_core::backprop::GradStore;
use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient norm limit; `0` disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.clip_norm >= 0.0;
        if !ok {
            return Err(Error::invalid(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    /// Completed updates.
    pub t: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Vec<f32>> = params.vars().map(|v| vec![0.0; v.as_tensor().elem_count()]).collect();
        Ok(Self {
            config,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        })
    }

    /// Applies one update and returns the pre-clip gradient norm. Parameters
    /// without a gradient are treated as having a zero gradient.
    pub fn step(&mut self, params: &ParamStore, grads: &GradStore) -> Result<f64> {
        if self.m.len() != params.len() {
            return Err(Error::invalid("optimizer state does not match the parameter set"));
        }
        let mut gs = Vec::with_capacity(params.len());
        for var in params.vars() {
            let n = var.as_tensor().elem_count();
            gs.push(match grads.get(var.as_tensor()) {
                Some(g) => g.flatten_all()?.to_vec1::<f32>()?,
                None => vec![0.0; n],
            });
        }
        let norm = gs
            .iter()
            .flatten()
            .map(|&g| f64::from(g) * f64::from(g))
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() {
            return Err(Error::invalid("non-finite gradient"));
        }
        let c = self.config;
        let scale = if c.clip_norm > 0.0 && norm > c.clip_norm { c.clip_norm / norm } else { 1.0 };
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        for (((var, g), m), v) in params.vars().zip(&gs).zip(&mut self.m).zip(&mut self.v) {
            let mut p = var.as_tensor().flatten_all()?.to_vec1::<f32>()?;
            for i in 0..p.len() {
                let gi = g[i] * scale as f32;
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let mh = f64::from(m[i]) / bc1;
                let vh = f64::from(v[i]) / bc2;
                p[i] -= (c.lr * mh / (vh.sqrt() + c.eps)) as f32;
            }
            var.set(&Tensor::from_vec(p, var.as_tensor().dims(), var.as_tensor().device())?)?;
        }
        Ok(norm)
    }
}
