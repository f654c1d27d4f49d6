//! Latent-space diffusion with conditional energy-based priors.
//!
//! Training (one mini-batch, one shared step `t`):
//!
//! 1. `z_0 ~ q(z_0 | x)` by reparameterization.
//! 2. `z_t` from the forward marginal of `z_0`, then `z_{t+1}` by one
//!    forward step.
//! 3. A negative `z̃_t` from the conditional Langevin chain started at
//!    `z_{t+1}`.
//! 4. Encoder and decoder descend `recon - Σ log sigma` (reconstruction
//!    plus the pathwise posterior entropy term). No gradient flows from the
//!    diffusion branch into the encoder.
//! 5. The energy descends `mean E(z_t, t) - mean E(z̃_t, t)`.
//!
//! Reconstruction encodes the posterior mean, diffuses it `steps` steps and
//! walks the chain back to `t = 0` before decoding.

use crate::autodiff::Graph;
use crate::error::{contract, Result};
use crate::models::{apply_update, LossReport, ModelKind, TrainConfig};
use crate::networks::{recon_loss, reparameterize, Decoder, Encoder, EnergyNet};
use crate::optim::AdamState;
use crate::rng::Rng;
use crate::samplers::{denoise_trajectory, langevin_denoise_step, LangevinConfig, VarianceTrace};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct LsdEbmModel {
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub energy: EnergyNet,
    pub schedule: NoiseSchedule,
    pub train_langevin: LangevinConfig,
    pub infer_langevin: LangevinConfig,
    pub energy_reg: f64,
    pub opt_autoencoder: AdamState,
    pub opt_energy: AdamState,
}

/// Contrastive energy step shared by the latent EBMs: descends
/// `mean E(pos) - mean E(neg) + reg * mean(E(pos)² + E(neg)²)`.
/// Returns the pre-update mean energies.
pub fn contrastive_update(
    energy: &mut EnergyNet,
    opt: &mut AdamState,
    positives: &Tensor,
    negatives: &Tensor,
    t: Option<usize>,
    reg: f64,
) -> Result<(f64, f64)> {
    let mut g = Graph::new();
    let bound = energy.bind(&mut g, true);
    let pv = g.constant(positives.clone());
    let nv = g.constant(negatives.clone());
    let ep = bound.forward(&mut g, pv, t)?;
    let en = bound.forward(&mut g, nv, t)?;
    let mp = g.mean(ep);
    let mn = g.mean(en);
    let mut loss = g.sub(mp, mn);
    if reg > 0.0 {
        let sp = g.sq_norm(ep);
        let sn = g.sq_norm(en);
        let s = g.add(sp, sn);
        let s = g.scale(s, reg / positives.rows() as f64);
        loss = g.add(loss, s);
    }
    g.backward(loss)?;
    let (e_pos, e_neg) = (g.value(mp).item(), g.value(mn).item());
    let vars = bound.param_vars();
    apply_update(g, &vars, energy.params_mut(), opt)?;
    Ok((e_pos, e_neg))
}

impl LsdEbmModel {
    pub fn new(cfg: &TrainConfig, data_dim: usize, rng: &mut Rng) -> Result<Self> {
        let net = &cfg.net;
        let schedule = cfg.schedule()?;
        let encoder = Encoder::new(data_dim, &net.hidden, net.latent_dim, rng);
        let decoder = Decoder::new(net.latent_dim, &net.decoder_hidden(), data_dim, cfg.likelihood, rng);
        let energy = EnergyNet::new(net.latent_dim, &net.energy_hidden, Some(schedule.steps()), rng);
        let lr = cfg.lr_for(ModelKind::LsdEbm);
        Ok(LsdEbmModel {
            encoder,
            decoder,
            energy,
            schedule,
            train_langevin: cfg.train_langevin(),
            infer_langevin: cfg.infer_langevin(),
            energy_reg: cfg.energy_reg,
            opt_autoencoder: AdamState::new(lr),
            opt_energy: AdamState::new(lr),
        })
    }

    /// Assembles a model from trained parts (e.g. a checkpoint).
    pub fn from_parts(
        encoder: Encoder,
        decoder: Decoder,
        energy: EnergyNet,
        schedule: NoiseSchedule,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        if encoder.latent_dim() != decoder.latent_dim() || energy.input_dim() != encoder.latent_dim() {
            return Err(contract("encoder, decoder and energy latent sizes differ"));
        }
        if energy.max_step() != Some(schedule.steps()) {
            return Err(contract(format!(
                "energy embeds {:?} steps but the schedule has T={}",
                energy.max_step(),
                schedule.steps()
            )));
        }
        let lr = cfg.lr_for(ModelKind::LsdEbm);
        Ok(LsdEbmModel {
            encoder,
            decoder,
            energy,
            schedule,
            train_langevin: cfg.train_langevin(),
            infer_langevin: cfg.infer_langevin(),
            energy_reg: cfg.energy_reg,
            opt_autoencoder: AdamState::new(lr),
            opt_energy: AdamState::new(lr),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.latent_dim()
    }

    pub fn train_step(&mut self, x: &Tensor, rng: &mut Rng) -> Result<LossReport> {
        let n = x.rows() as f64;
        let t = rng.below(self.schedule.steps());

        // encoder/decoder
        let mut g = Graph::new();
        let enc = self.encoder.bind(&mut g, true);
        let dec = self.decoder.mlp.bind(&mut g, true);
        let xv = g.constant(x.clone());
        let (mu, ls) = enc.forward(&mut g, xv);
        let eps = Tensor::gaussian(rng, g.shape(mu).to_vec());
        let z0v = reparameterize(&mut g, mu, ls, &eps);
        let raw = dec.forward(&mut g, z0v);
        let recon = recon_loss(&mut g, xv, raw, self.decoder.likelihood)?;
        let ls_sum = g.sum(ls);
        let neg_entropy = g.neg(ls_sum);
        let total = g.add(recon, neg_entropy);
        let loss = g.scale(total, 1.0 / n);
        g.backward(loss)?;
        let recon_value = g.value(recon).item() / n;
        let entropy_value = g.value(neg_entropy).item() / n;
        let z0 = g.value(z0v).clone();
        let mut vars = enc.param_vars();
        vars.extend(dec.param_vars());
        let mut params = self.encoder.params_mut();
        params.extend(self.decoder.params_mut());
        apply_update(g, &vars, params, &mut self.opt_autoencoder)?;

        // positives and negatives at step t
        let z_t = self.schedule.forward_marginal(&z0, t, rng)?;
        let z_next = self.schedule.forward_step(&z_t, t, rng)?;
        let z_neg = langevin_denoise_step(&z_next, t, &self.energy, &self.schedule, &self.train_langevin, rng)
            .map_err(|e| match e {
                crate::Error::Divergence { .. } => crate::Error::Training {
                    epoch: 0,
                    batch: 0,
                    t: Some(t),
                },
                other => other,
            })?;
        let (e_pos, e_neg) = contrastive_update(
            &mut self.energy,
            &mut self.opt_energy,
            &z_t,
            &z_neg,
            Some(t),
            self.energy_reg,
        )?;

        Ok(LossReport {
            recon: recon_value,
            kl_or_entropy: entropy_value,
            e_pos,
            e_neg,
            t: Some(t),
        })
    }

    /// Latent after diffusing the posterior mean `steps` steps and denoising
    /// back to `t = 0`. `steps = 0` returns the posterior mean unchanged.
    pub fn refine_latent(
        &self,
        x: &Tensor,
        steps: usize,
        rng: &mut Rng,
        trace: Option<&mut VarianceTrace>,
    ) -> Result<Tensor> {
        if steps > self.schedule.steps() {
            return Err(contract(format!(
                "inference depth {steps} exceeds trained T={}",
                self.schedule.steps()
            )));
        }
        let mu = self.encoder.encode(x, rng, true)?.mu;
        if steps == 0 {
            return Ok(mu);
        }
        let z_top = self.schedule.forward_marginal(&mu, steps, rng)?;
        denoise_trajectory(&z_top, steps, &self.energy, &self.schedule, &self.infer_langevin, rng, trace)
    }

    /// Decoded reconstruction (probabilities or means).
    pub fn reconstruct(
        &self,
        x: &Tensor,
        steps: usize,
        rng: &mut Rng,
        trace: Option<&mut VarianceTrace>,
    ) -> Result<Tensor> {
        let z0 = self.refine_latent(x, steps, rng, trace)?;
        self.decoder.decode(&z0)
    }

    /// `z_T ~ N(0, I)`, denoise through all `T` steps, decode.
    pub fn generate(&self, n: usize, rng: &mut Rng) -> Result<Tensor> {
        let z_top = Tensor::gaussian(rng, [n, self.latent_dim()]);
        let z0 = denoise_trajectory(
            &z_top,
            self.schedule.steps(),
            &self.energy,
            &self.schedule,
            &self.infer_langevin,
            rng,
            None,
        )?;
        self.decoder.decode(&z0)
    }

    fn names(&self) -> Vec<String> {
        let mut names = self.encoder.param_names();
        names.extend(self.decoder.param_names());
        names.extend(self.energy.param_names());
        names
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut params = self.encoder.params();
        params.extend(self.decoder.params());
        params.extend(self.energy.params());
        self.names().into_iter().zip(params).collect()
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let names = self.names();
        let mut params = self.encoder.params_mut();
        params.extend(self.decoder.params_mut());
        params.extend(self.energy.params_mut());
        names.into_iter().zip(params).collect()
    }
}
