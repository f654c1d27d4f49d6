//! Langevin samplers.
//!
//! All chains are unadjusted Langevin ascent on a log-density:
//!
//! ```text
//! z <- z + (h / 2) * grad log p(z) + sqrt(h) * eps,   eps ~ N(0, I)
//! ```
//!
//! Each row of a batch tensor is an independent chain. Energies enter as
//! `log p = -E + ...`, so a chain descends the energy.
//!
//! The conditional denoising chain targets
//! `p(z_t | z_{t+1}) ∝ exp(-E(z_t, t) - |z_{t+1} - z_t|^2 / (2 s_{t+1}))`
//! and starts at `z_{t+1}`. Its step size can be given in absolute units or as
//! a multiple of the step variance `s_{t+1}` ([`StepScale`]); the latter keeps
//! the quadratic tether's contraction per update fixed across the schedule.

use crate::autodiff::Graph;
use crate::error::{contract, Error, Result};
use crate::networks::{recon_loss, Decoder, EnergyNet};
use crate::rng::Rng;
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

/// A differentiable scalar energy over row batches.
pub trait Energy {
    /// Per-row energies and the gradient of each row's energy w.r.t. that row.
    fn energy_grad(&self, z: &Tensor, t: Option<usize>) -> Result<(Vec<f64>, Tensor)>;
}

impl Energy for EnergyNet {
    fn energy_grad(&self, z: &Tensor, t: Option<usize>) -> Result<(Vec<f64>, Tensor)> {
        EnergyNet::energy_grad(self, z, t)
    }
}

/// `E ≡ 0`.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroEnergy;

impl Energy for ZeroEnergy {
    fn energy_grad(&self, z: &Tensor, _t: Option<usize>) -> Result<(Vec<f64>, Tensor)> {
        Ok((vec![0.0; z.rows()], Tensor::zeros(z.shape().to_vec())))
    }
}

/// `E(z) = ½ zᵀ A z` for a symmetric `d x d` matrix `A`.
#[derive(Clone, Debug)]
pub struct QuadraticEnergy {
    pub precision: Tensor,
}

impl QuadraticEnergy {
    pub fn isotropic(dim: usize) -> Self {
        QuadraticEnergy {
            precision: Tensor::identity(dim),
        }
    }
}

impl Energy for QuadraticEnergy {
    fn energy_grad(&self, z: &Tensor, _t: Option<usize>) -> Result<(Vec<f64>, Tensor)> {
        // rows of z·A are the per-row gradients since A is symmetric
        let grad = z.matmul(&self.precision)?;
        let energies = (0..z.rows())
            .map(|r| 0.5 * z.row(r).iter().zip(grad.row(r)).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        Ok((energies, grad))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepScale {
    /// `h = step_size`.
    Fixed,
    /// `h = step_size * s_{t+1}` for the denoising chain of step `t`.
    ScheduleVariance,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LangevinConfig {
    pub steps: usize,
    pub step_size: f64,
    /// Inject `sqrt(h) * eps`; switched off only in tests.
    pub noise: bool,
    pub scale: StepScale,
}

impl LangevinConfig {
    pub fn new(steps: usize, step_size: f64) -> Self {
        LangevinConfig {
            steps,
            step_size,
            noise: true,
            scale: StepScale::Fixed,
        }
    }

    pub fn with_scale(mut self, scale: StepScale) -> Self {
        self.scale = scale;
        self
    }

    pub fn without_noise(mut self) -> Self {
        self.noise = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(contract(format!(
                "langevin needs K >= 1 and step size > 0, got K={} step={}",
                self.steps, self.step_size
            )));
        }
        Ok(())
    }

    fn step_for(&self, variance: f64) -> f64 {
        match self.scale {
            StepScale::Fixed => self.step_size,
            StepScale::ScheduleVariance => self.step_size * variance,
        }
    }
}

impl Default for LangevinConfig {
    /// `K = 20`, `step = 0.1`.
    fn default() -> Self {
        LangevinConfig::new(20, 0.1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceDirection {
    Noising,
    Denoising,
    Mcmc,
}

/// Per-step mean (over dimensions) of the across-batch variance of latents.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceTrace {
    pub direction: TraceDirection,
    pub values: Vec<f64>,
}

impl VarianceTrace {
    pub fn new(direction: TraceDirection) -> Self {
        VarianceTrace {
            direction,
            values: Vec::new(),
        }
    }

    /// Appends the variance of a `[batch, dim]` state.
    pub fn record(&mut self, states: &Tensor) -> Result<f64> {
        let v = batch_variance(states)?;
        self.values.push(v);
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Mean over dimensions of the unbiased across-row variance.
pub fn batch_variance(states: &Tensor) -> Result<f64> {
    let n = states.rows();
    if n < 2 {
        return Err(contract(format!("variance needs a batch of >= 2, got {n}")));
    }
    let d = states.cols();
    let mut mean = vec![0.0; d];
    for r in 0..n {
        mean.iter_mut().zip(states.row(r)).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for r in 0..n {
        var.iter_mut()
            .zip(states.row(r))
            .zip(&mean)
            .for_each(|((s, v), m)| *s += (v - m) * (v - m));
    }
    Ok(var.iter().sum::<f64>() / ((n - 1) as f64 * d as f64))
}

fn check_latents(a: &Tensor, b: &Tensor) -> Result<()> {
    a.check_same_shape(b, "cond_logp_grad")
}

/// `grad_z log p(z_t | z_{t+1}) = -grad E(z_t, t) + (z_{t+1} - z_t) / s_{t+1}`.
pub fn cond_logp_grad<E: Energy + ?Sized>(
    z_t: &Tensor,
    z_next: &Tensor,
    t: usize,
    energy: &E,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    if t >= schedule.steps() {
        return Err(contract(format!(
            "denoising step t={t} out of range 0..{}",
            schedule.steps()
        )));
    }
    check_latents(z_t, z_next)?;
    let s = schedule.sigma_sq(t + 1);
    if s <= 0.0 {
        return Err(contract(format!(
            "step variance at t+1={} is zero; sampling needs a strictly positive schedule",
            t + 1
        )));
    }
    let (_, grad_e) = energy.energy_grad(z_t, Some(t))?;
    let data = grad_e
        .data()
        .iter()
        .zip(z_t.data())
        .zip(z_next.data())
        .map(|((ge, zt), zn)| -ge + (zn - zt) / s)
        .collect();
    Tensor::new(z_t.shape().to_vec(), data)
}

fn langevin_update(
    z: &mut Tensor,
    grad: &Tensor,
    h: f64,
    noise: bool,
    rng: &mut Rng,
    at: (usize, usize),
) -> Result<()> {
    let half = 0.5 * h;
    let sd = h.sqrt();
    let data = z.data_mut();
    if noise {
        for (v, g) in data.iter_mut().zip(grad.data()) {
            *v += half * g + sd * rng.normal();
        }
    } else {
        for (v, g) in data.iter_mut().zip(grad.data()) {
            *v += half * g;
        }
    }
    if !z.all_finite() {
        return Err(Error::Divergence { t: at.0, k: at.1 });
    }
    Ok(())
}

/// Draws `z_t` given `z_{t+1}` with `K` Langevin updates started at
/// `z_{t+1}`.
pub fn langevin_denoise_step<E: Energy + ?Sized>(
    z_next: &Tensor,
    t: usize,
    energy: &E,
    schedule: &NoiseSchedule,
    cfg: &LangevinConfig,
    rng: &mut Rng,
) -> Result<Tensor> {
    cfg.validate()?;
    let h = cfg.step_for(schedule.sigma_sq((t + 1).min(schedule.steps())));
    let mut z = z_next.clone();
    for k in 0..cfg.steps {
        let grad = cond_logp_grad(&z, z_next, t, energy, schedule)?;
        langevin_update(&mut z, &grad, h, cfg.noise, rng, (t, k))?;
    }
    Ok(z)
}

/// Runs the denoising chain from `z_T` down to `z_0`, optionally recording
/// the across-batch variance after every step.
pub fn denoise_trajectory<E: Energy + ?Sized>(
    z_top: &Tensor,
    from_step: usize,
    energy: &E,
    schedule: &NoiseSchedule,
    cfg: &LangevinConfig,
    rng: &mut Rng,
    mut trace: Option<&mut VarianceTrace>,
) -> Result<Tensor> {
    if from_step > schedule.steps() {
        return Err(contract(format!(
            "cannot denoise from step {from_step} with T={}",
            schedule.steps()
        )));
    }
    let mut z = z_top.clone();
    for t in (0..from_step).rev() {
        z = langevin_denoise_step(&z, t, energy, schedule, cfg, rng)?;
        if let Some(tr) = trace.as_deref_mut() {
            tr.record(&z)?;
        }
    }
    Ok(z)
}

/// Data-space chain `x <- x - (h/2) grad E(x) + sqrt(h) eps`.
pub fn langevin_image_ebm<E: Energy + ?Sized>(
    x_init: &Tensor,
    energy: &E,
    cfg: &LangevinConfig,
    rng: &mut Rng,
) -> Result<Tensor> {
    cfg.validate()?;
    let mut x = x_init.clone();
    for k in 0..cfg.steps {
        let (_, g) = energy.energy_grad(&x, None)?;
        let ascent = g.scale(-1.0);
        langevin_update(&mut x, &ascent, cfg.step_size, cfg.noise, rng, (0, k))?;
    }
    Ok(x)
}

/// `grad_z [-E(z) - ½|z|²]`, the latent EBM prior with standard-normal base.
pub fn lebm_prior_grad<E: Energy + ?Sized>(z: &Tensor, energy: &E) -> Result<Tensor> {
    let (_, g) = energy.energy_grad(z, None)?;
    let data = g.data().iter().zip(z.data()).map(|(ge, zi)| -ge - zi).collect();
    Tensor::new(z.shape().to_vec(), data)
}

/// `log p(x | z) + log p_prior(z)` up to constants, per batch (summed over rows).
pub fn lebm_log_joint<E: Energy + ?Sized>(
    z: &Tensor,
    x: &Tensor,
    decoder: &Decoder,
    energy: &E,
) -> Result<f64> {
    let (energies, _) = energy.energy_grad(z, None)?;
    let raw = decoder.raw(z)?;
    let recon = crate::networks::recon_loss_value(x, &raw, decoder.likelihood)?;
    Ok(-energies.iter().sum::<f64>() - 0.5 * z.sq_norm() - recon)
}

/// `grad_z [log p(x|z) - E(z) - ½|z|²]` through the decoder.
pub fn lebm_posterior_grad<E: Energy + ?Sized>(
    z: &Tensor,
    x: &Tensor,
    decoder: &Decoder,
    energy: &E,
) -> Result<Tensor> {
    let prior = lebm_prior_grad(z, energy)?;
    let mut g = Graph::new();
    let bound = decoder.mlp.bind(&mut g, false);
    let zv = g.param(z.clone());
    let xv = g.constant(x.clone());
    let raw = bound.forward(&mut g, zv);
    let loss = recon_loss(&mut g, xv, raw, decoder.likelihood)?;
    g.backward(loss)?;
    let gl = g.grad(zv).expect("z requires grad");
    prior.sub(&gl)
}

/// Short-run prior chain from `N(0, I)` for `n` latents of size `dim`.
pub fn lebm_prior_sample<E: Energy + ?Sized>(
    n: usize,
    dim: usize,
    cfg: &LangevinConfig,
    energy: &E,
    rng: &mut Rng,
    trace: Option<&mut VarianceTrace>,
) -> Result<Tensor> {
    let init = Tensor::gaussian(rng, [n, dim]);
    lebm_prior_chain(&init, cfg, energy, rng, trace)
}

/// Prior chain from a given initialization.
pub fn lebm_prior_chain<E: Energy + ?Sized>(
    init: &Tensor,
    cfg: &LangevinConfig,
    energy: &E,
    rng: &mut Rng,
    mut trace: Option<&mut VarianceTrace>,
) -> Result<Tensor> {
    cfg.validate()?;
    let mut z = init.clone();
    for k in 0..cfg.steps {
        let g = lebm_prior_grad(&z, energy)?;
        langevin_update(&mut z, &g, cfg.step_size, cfg.noise, rng, (0, k))?;
        if let Some(tr) = trace.as_deref_mut() {
            tr.record(&z)?;
        }
    }
    Ok(z)
}

/// Short-run posterior chain for a batch of observations `x`, started from
/// `N(0, I)`.
pub fn lebm_posterior_sample<E: Energy + ?Sized>(
    x: &Tensor,
    decoder: &Decoder,
    energy: &E,
    cfg: &LangevinConfig,
    rng: &mut Rng,
    trace: Option<&mut VarianceTrace>,
) -> Result<Tensor> {
    let init = Tensor::gaussian(rng, [x.rows(), decoder.latent_dim()]);
    lebm_posterior_chain(&init, x, decoder, energy, cfg, rng, trace)
}

pub fn lebm_posterior_chain<E: Energy + ?Sized>(
    init: &Tensor,
    x: &Tensor,
    decoder: &Decoder,
    energy: &E,
    cfg: &LangevinConfig,
    rng: &mut Rng,
    mut trace: Option<&mut VarianceTrace>,
) -> Result<Tensor> {
    cfg.validate()?;
    let mut z = init.clone();
    for k in 0..cfg.steps {
        let g = lebm_posterior_grad(&z, x, decoder, energy)?;
        langevin_update(&mut z, &g, cfg.step_size, cfg.noise, rng, (0, k))?;
        if let Some(tr) = trace.as_deref_mut() {
            tr.record(&z)?;
        }
    }
    Ok(z)
}
