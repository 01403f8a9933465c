//! Linear-beta noise schedule, forward noising and deterministic DDIM steps.

use headswap_core::canvas::LatentTensor;
use ndarray::{Array5, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub num_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            num_steps: 1000,
            beta_start: 1e-4,
            beta_end: 2e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::new(ScheduleConfig::default()).expect("default schedule is valid")
    }
}

impl NoiseSchedule {
    pub fn new(config: ScheduleConfig) -> Result<Self> {
        let ScheduleConfig {
            num_steps: n,
            beta_start,
            beta_end,
        } = config;
        if n < 2 {
            return Err(Error::invalid("schedule needs at least two steps"));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::invalid(format!("betas must satisfy 0 < {beta_start} <= {beta_end} < 1")));
        }
        let betas: Vec<f64> = (0..n)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (n - 1) as f64)
            .collect();
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self {
            config,
            betas,
            alpha_bars,
        })
    }

    pub fn config(&self) -> ScheduleConfig {
        self.config
    }

    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t >= self.num_steps() {
            return Err(Error::invalid(format!("timestep {t} outside [0, {})", self.num_steps())));
        }
        Ok(())
    }

    /// `alpha_bar` at `t`, with `None` meaning the clean end of the chain (1).
    pub fn alpha_bar(&self, t: Option<usize>) -> Result<f64> {
        match t {
            None => Ok(1.0),
            Some(t) => {
                self.check_t(t)?;
                Ok(self.alpha_bars[t])
            }
        }
    }

    /// `sqrt(ab_t) z0 + sqrt(1 - ab_t) eps`.
    pub fn add_noise(&self, z0: &LatentTensor, t: usize, eps: &LatentTensor) -> Result<LatentTensor> {
        if z0.dims() != eps.dims() {
            return Err(Error::invalid(format!("noise shape {:?} vs latent {:?}", eps.dims(), z0.dims())));
        }
        Ok(LatentTensor::new(self.add_noise_array(z0.data(), t, eps.data())?)?)
    }

    pub(crate) fn add_noise_array(&self, z0: &Array5<f32>, t: usize, eps: &Array5<f32>) -> Result<Array5<f32>> {
        self.check_t(t)?;
        let ab = self.alpha_bars[t];
        let (a, s) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
        Ok(Zip::from(z0).and(eps).map_collect(|&z, &e| a * z + s * e))
    }

    /// Deterministic DDIM update from `t` to `t_prev` (`None` = fully denoised).
    pub fn ddim_step(
        &self,
        z_t: &LatentTensor,
        eps_pred: &LatentTensor,
        t: usize,
        t_prev: Option<usize>,
    ) -> Result<LatentTensor> {
        if z_t.dims() != eps_pred.dims() {
            return Err(Error::invalid("ddim_step: prediction and state shapes differ"));
        }
        if let Some(p) = t_prev {
            if p >= t {
                return Err(Error::invalid(format!("ddim_step must move backwards ({t} -> {p})")));
            }
        }
        let ab_t = self.alpha_bar(Some(t))?;
        let ab_p = self.alpha_bar(t_prev)?;
        let (st, nt) = (ab_t.sqrt(), (1.0 - ab_t).sqrt());
        let (sp, np) = (ab_p.sqrt(), (1.0 - ab_p).sqrt());
        let out = Zip::from(z_t.data()).and(eps_pred.data()).map_collect(|&z, &e| {
            let (z, e) = (f64::from(z), f64::from(e));
            let x0 = (z - nt * e) / st;
            (sp * x0 + np * e) as f32
        });
        Ok(LatentTensor::new(out)?)
    }

    /// Descending inference timesteps: `steps` evenly spaced points at or
    /// below `strength * (T - 1)`.
    pub fn inference_timesteps(&self, steps: usize, strength: f64) -> Result<Vec<usize>> {
        if steps == 0 {
            return Err(Error::invalid("need at least one inference step"));
        }
        if !(strength > 0.0 && strength <= 1.0) {
            return Err(Error::invalid(format!("strength {strength} outside (0, 1]")));
        }
        let top = ((self.num_steps() - 1) as f64 * strength).round() as usize;
        let steps = steps.min(top + 1);
        if steps == 1 {
            return Ok(vec![top]);
        }
        let mut ts: Vec<usize> = (0..steps)
            .map(|i| ((top as f64) * (steps - 1 - i) as f64 / (steps - 1) as f64).round() as usize)
            .collect();
        ts.dedup();
        Ok(ts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array5;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random(shape: (usize, usize, usize, usize, usize), seed: u64) -> LatentTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LatentTensor::new(Array5::from_shape_simple_fn(shape, || StandardNormal.sample(&mut rng))).unwrap()
    }

    #[test]
    fn schedule_invariants() {
        let s = NoiseSchedule::default();
        assert_eq!(s.num_steps(), 1000);
        assert_eq!(s.betas()[0], 1e-4);
        assert!((s.betas()[999] - 2e-2).abs() < 1e-15);
        assert!(s.betas().iter().all(|&b| b > 0.0 && b < 1.0));
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!((s.alpha_bars()[0] - (1.0 - 1e-4)).abs() < 1e-15);
        assert!(NoiseSchedule::new(ScheduleConfig { num_steps: 1, ..Default::default() }).is_err());
        assert!(NoiseSchedule::new(ScheduleConfig { beta_end: 1.5, ..Default::default() }).is_err());
    }

    #[test]
    fn add_noise_cases() {
        let s = NoiseSchedule::default();
        let z0 = random((1, 2, 3, 4, 4), 1);
        let eps = random((1, 2, 3, 4, 4), 2);
        let zero = LatentTensor::zeros(z0.dims()).unwrap();
        let scaled = s.add_noise(&z0, 500, &zero).unwrap();
        let a = s.alpha_bars()[500].sqrt() as f32;
        for (x, y) in scaled.data().iter().zip(z0.data()) {
            assert_eq!(*x, a * y);
        }
        let near = s.add_noise(&z0, 0, &eps).unwrap();
        let bound = (1.0 - s.alpha_bars()[0]).sqrt() as f32 * 5.0 + 1e-4;
        for (x, y) in near.data().iter().zip(z0.data()) {
            assert!((x - y).abs() <= bound);
        }
        assert!(s.add_noise(&z0, 1000, &eps).is_err());
    }

    #[test]
    fn forward_variance_matches_closed_form() {
        let s = NoiseSchedule::default();
        let n = 100_000;
        let z0 = LatentTensor::zeros((1, 1, 1, 1, n)).unwrap();
        let eps = random((1, 1, 1, 1, n), 3);
        for t in [10usize, 250, 999] {
            let zt = s.add_noise(&z0, t, &eps).unwrap();
            let mean = zt.data().iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
            let var = zt.data().iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let expect = 1.0 - s.alpha_bars()[t];
            assert!((var - expect).abs() <= 0.05 * expect, "t={t}: {var} vs {expect}");
        }
    }

    #[test]
    fn ddim_with_true_noise_lands_on_the_previous_marginal() {
        let s = NoiseSchedule::default();
        let z0 = random((2, 3, 2, 4, 4), 4);
        let eps = random((2, 3, 2, 4, 4), 5);
        for t in [1usize, 20, 500, 999] {
            let zt = s.add_noise(&z0, t, &eps).unwrap();
            let prev = s.ddim_step(&zt, &eps, t, Some(t - 1)).unwrap();
            let expect = s.add_noise(&z0, t - 1, &eps).unwrap();
            for (a, b) in prev.data().iter().zip(expect.data()) {
                assert!((a - b).abs() < 1e-5 * (1.0 + b.abs()), "t={t}: {a} vs {b}");
            }
        }
        let last = s.ddim_step(&s.add_noise(&z0, 5, &eps).unwrap(), &eps, 5, None).unwrap();
        for (a, b) in last.data().iter().zip(z0.data()) {
            assert!((a - b).abs() < 1e-5);
        }
        assert!(s.ddim_step(&z0, &eps, 5, Some(5)).is_err());
    }

    #[test]
    fn inference_timesteps_cover_the_range() {
        let s = NoiseSchedule::default();
        let ts = s.inference_timesteps(50, 1.0).unwrap();
        assert_eq!(ts.len(), 50);
        assert_eq!((ts[0], *ts.last().unwrap()), (999, 0));
        assert!(ts.windows(2).all(|w| w[0] > w[1]));
        let half = s.inference_timesteps(10, 0.5).unwrap();
        assert_eq!(half[0], 500);
        assert_eq!(s.inference_timesteps(1, 1.0).unwrap(), vec![999]);
        assert!(s.inference_timesteps(0, 1.0).is_err());
        assert!(s.inference_timesteps(5, 0.0).is_err());
    }
}
