//! The latent forward diffusion.
//!
//! One step maps `z_t` to `z_{t+1} = sqrt(1 - s_{t+1}) z_t + sqrt(s_{t+1}) eps`,
//! where `s_t` is the per-step variance. Composing `t` steps from `z_0` gives
//! the closed form `z_t = sqrt(g_t) z_0 + sqrt(1 - g_t) eps` with
//! `g_t = prod_{i<=t} (1 - s_i)`.

use crate::error::{contract, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    sigma_sq: Vec<f64>,
    // gamma[0] = 1, gamma[t] = prod_{i=1..t} (1 - sigma_sq_i)
    gamma: Vec<f64>,
}

impl NoiseSchedule {
    /// Schedule from explicit per-step variances `s_1..s_T`.
    pub fn from_sigma_sq(sigma_sq: Vec<f64>) -> Result<Self> {
        if sigma_sq.is_empty() {
            return Err(contract("noise schedule needs T >= 1"));
        }
        if let Some(bad) = sigma_sq.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(contract(format!("per-step variance {bad} outside [0, 1]")));
        }
        let mut gamma = Vec::with_capacity(sigma_sq.len() + 1);
        gamma.push(1.0);
        let mut acc = 1.0;
        for s in &sigma_sq {
            acc *= 1.0 - s;
            gamma.push(acc);
        }
        Ok(NoiseSchedule { sigma_sq, gamma })
    }

    /// Per-step variance interpolated linearly from `min` at `t = 1` to
    /// `max` at `t = T`.
    pub fn linear(steps: usize, min: f64, max: f64) -> Result<Self> {
        if steps == 0 {
            return Err(contract("noise schedule needs T >= 1"));
        }
        if !(0.0 <= min && min <= max && max <= 1.0) {
            return Err(contract(format!(
                "schedule bounds must satisfy 0 <= min <= max <= 1, got ({min}, {max})"
            )));
        }
        let sigma_sq = (0..steps)
            .map(|i| {
                if steps == 1 {
                    min
                } else {
                    min + (max - min) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_sigma_sq(sigma_sq)
    }

    pub fn steps(&self) -> usize {
        self.sigma_sq.len()
    }

    /// Variance of the step that produces `z_t`, for `1 <= t <= T`.
    pub fn sigma_sq(&self, t: usize) -> f64 {
        self.sigma_sq[t - 1]
    }

    pub fn sigma_sq_all(&self) -> &[f64] {
        &self.sigma_sq
    }

    /// Cumulative signal fraction `g_t`, for `0 <= t <= T`.
    pub fn gamma(&self, t: usize) -> f64 {
        self.gamma[t]
    }

    pub fn gamma_all(&self) -> &[f64] {
        &self.gamma[1..]
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t >= self.steps() {
            return Err(contract(format!(
                "diffusion step t={t} out of range 0..{}",
                self.steps()
            )));
        }
        Ok(())
    }

    /// One forward step `z_t -> z_{t+1}`.
    pub fn forward_step(&self, z_t: &Tensor, t: usize, rng: &mut Rng) -> Result<Tensor> {
        self.check_step(t)?;
        let s = self.sigma_sq(t + 1);
        let (a, b) = ((1.0 - s).sqrt(), s.sqrt());
        let noise = rng.normal_vec(z_t.len());
        let data = z_t.data().iter().zip(noise).map(|(z, e)| a * z + b * e).collect();
        Tensor::new(z_t.shape().to_vec(), data)
    }

    /// A single draw of `z_t` given `z_0`.
    pub fn forward_marginal(&self, z_0: &Tensor, t: usize, rng: &mut Rng) -> Result<Tensor> {
        if t > self.steps() {
            return Err(contract(format!(
                "marginal step t={t} out of range 0..={}",
                self.steps()
            )));
        }
        if t == 0 {
            return Ok(z_0.clone());
        }
        let g = self.gamma(t);
        let (a, b) = (g.sqrt(), (1.0 - g).sqrt());
        let noise = rng.normal_vec(z_0.len());
        let data = z_0.data().iter().zip(noise).map(|(z, e)| a * z + b * e).collect();
        Tensor::new(z_0.shape().to_vec(), data)
    }

    /// `E[z_{t+1} | z_t] = sqrt(1 - s_{t+1}) z_t`.
    pub fn shifted_mean(&self, z_t: &Tensor, t: usize) -> Result<Tensor> {
        self.check_step(t)?;
        Ok(z_t.scale((1.0 - self.sigma_sq(t + 1)).sqrt()))
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::linear(20, 1e-4, 0.02).expect("default schedule")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step() {
        let s = NoiseSchedule::linear(1, 0.04, 0.04).unwrap();
        assert_eq!(s.sigma_sq_all(), &[0.04]);
        assert_eq!(s.gamma_all(), &[0.96]);
    }

    #[test]
    fn gamma_is_running_product() {
        let s = NoiseSchedule::linear(20, 1e-4, 0.02).unwrap();
        let mut prod = 1.0;
        for t in 1..=20 {
            let st = 1e-4 + (0.02 - 1e-4) * (t - 1) as f64 / 19.0;
            prod *= 1.0 - st;
            assert!((s.gamma(t) - prod).abs() < 1e-15);
        }
        assert!(s.gamma_all().windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(s.sigma_sq(1), 1e-4);
        assert!((s.sigma_sq(20) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn zero_variance_schedule() {
        let s = NoiseSchedule::linear(5, 0.0, 0.0).unwrap();
        assert!(s.gamma_all().iter().all(|&g| g == 1.0));
        let mut rng = Rng::new(0);
        let z = Tensor::from_vec(vec![0.3, -1.2, 4.0]);
        for t in 0..=5 {
            assert_eq!(s.forward_marginal(&z, t, &mut rng).unwrap(), z);
        }
        assert_eq!(s.forward_step(&z, 2, &mut rng).unwrap(), z);
    }

    #[test]
    fn bounds_checked() {
        assert!(NoiseSchedule::linear(0, 0.0, 0.1).is_err());
        assert!(NoiseSchedule::linear(3, 0.2, 0.1).is_err());
        assert!(NoiseSchedule::linear(3, 0.0, 1.1).is_err());
        assert!(NoiseSchedule::linear(3, -0.1, 0.1).is_err());
        let s = NoiseSchedule::default();
        let z = Tensor::zeros([2]);
        let mut rng = Rng::new(0);
        assert!(s.forward_step(&z, 20, &mut rng).is_err());
        assert!(s.forward_marginal(&z, 21, &mut rng).is_err());
        assert!(s.shifted_mean(&z, 20).is_err());
    }

    #[test]
    fn unit_variance_forgets_input() {
        let s = NoiseSchedule::from_sigma_sq(vec![1.0]).unwrap();
        let z = Tensor::full([4], 100.0);
        let mut a = Rng::new(9);
        let mut b = Rng::new(9);
        let out = s.forward_step(&z, 0, &mut a).unwrap();
        assert_eq!(out.data(), b.normal_vec(4).as_slice());
    }

    #[test]
    fn marginal_at_zero_is_identity() {
        let s = NoiseSchedule::default();
        let z = Tensor::from_vec(vec![1.0, 2.0]);
        assert_eq!(s.forward_marginal(&z, 0, &mut Rng::new(1)).unwrap(), z);
    }

    #[test]
    fn shifted_mean_scales_norm() {
        let s = NoiseSchedule::default();
        let z = Tensor::from_vec(vec![3.0, 4.0]);
        let m = s.shifted_mean(&z, 7).unwrap();
        let expect = (1.0 - s.sigma_sq(8)).sqrt() * 5.0;
        assert!((m.sq_norm().sqrt() - expect).abs() < 1e-14);
        assert_eq!(s.shifted_mean(&Tensor::zeros([2]), 0).unwrap(), Tensor::zeros([2]));
    }
}
