//! Latent EBM: decoder `p(x|z)` with prior `exp(-E(z)) N(z; 0, I)` and no
//! encoder. Positives come from short-run posterior chains, negatives from
//! short-run prior chains, both started at `N(0, I)`.

use crate::autodiff::Graph;
use crate::error::Result;
use crate::models::lsdebm::contrastive_update;
use crate::models::{apply_update, LossReport, ModelKind, TrainConfig};
use crate::networks::{recon_loss, Decoder, EnergyNet};
use crate::optim::AdamState;
use crate::rng::Rng;
use crate::samplers::{lebm_posterior_sample, lebm_prior_sample, LangevinConfig, VarianceTrace};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct LebmModel {
    pub decoder: Decoder,
    pub energy: EnergyNet,
    pub prior_langevin: LangevinConfig,
    pub posterior_langevin: LangevinConfig,
    pub energy_reg: f64,
    pub opt_decoder: AdamState,
    pub opt_energy: AdamState,
}

impl LebmModel {
    pub fn new(cfg: &TrainConfig, data_dim: usize, rng: &mut Rng) -> Self {
        let net = &cfg.net;
        let decoder = Decoder::new(net.latent_dim, &net.decoder_hidden(), data_dim, cfg.likelihood, rng);
        let energy = EnergyNet::new(net.latent_dim, &net.energy_hidden, None, rng);
        Self::from_parts(decoder, energy, cfg)
    }

    pub fn from_parts(decoder: Decoder, energy: EnergyNet, cfg: &TrainConfig) -> Self {
        let lr = cfg.lr_for(ModelKind::Lebm);
        LebmModel {
            decoder,
            energy,
            prior_langevin: LangevinConfig::new(cfg.lebm_prior_steps, cfg.lebm_prior_step_size),
            posterior_langevin: LangevinConfig::new(cfg.lebm_posterior_steps, cfg.lebm_posterior_step_size),
            energy_reg: cfg.energy_reg,
            opt_decoder: AdamState::new(lr),
            opt_energy: AdamState::new(lr),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.latent_dim()
    }

    pub fn train_step(&mut self, x: &Tensor, rng: &mut Rng) -> Result<LossReport> {
        let n = x.rows();
        let z_pos = lebm_posterior_sample(x, &self.decoder, &self.energy, &self.posterior_langevin, rng, None)?;
        let z_neg = lebm_prior_sample(n, self.latent_dim(), &self.prior_langevin, &self.energy, rng, None)?;

        let mut g = Graph::new();
        let dec = self.decoder.mlp.bind(&mut g, true);
        let xv = g.constant(x.clone());
        let zv = g.constant(z_pos.clone());
        let raw = dec.forward(&mut g, zv);
        let recon = recon_loss(&mut g, xv, raw, self.decoder.likelihood)?;
        let loss = g.scale(recon, 1.0 / n as f64);
        g.backward(loss)?;
        let recon_value = g.value(loss).item();
        let vars = dec.param_vars();
        apply_update(g, &vars, self.decoder.params_mut(), &mut self.opt_decoder)?;

        let (e_pos, e_neg) = contrastive_update(
            &mut self.energy,
            &mut self.opt_energy,
            &z_pos,
            &z_neg,
            None,
            self.energy_reg,
        )?;
        Ok(LossReport {
            recon: recon_value,
            kl_or_entropy: 0.0,
            e_pos,
            e_neg,
            t: None,
        })
    }

    /// Posterior chain of `steps` updates from `N(0, I)`, then decode.
    pub fn reconstruct(
        &self,
        x: &Tensor,
        steps: usize,
        rng: &mut Rng,
        trace: Option<&mut VarianceTrace>,
    ) -> Result<Tensor> {
        let cfg = LangevinConfig {
            steps,
            ..self.posterior_langevin
        };
        let z = lebm_posterior_sample(x, &self.decoder, &self.energy, &cfg, rng, trace)?;
        self.decoder.decode(&z)
    }

    pub fn generate(&self, n: usize, rng: &mut Rng) -> Result<Tensor> {
        let z = lebm_prior_sample(n, self.latent_dim(), &self.prior_langevin, &self.energy, rng, None)?;
        self.decoder.decode(&z)
    }

    fn names(&self) -> Vec<String> {
        let mut names = self.decoder.param_names();
        names.extend(self.energy.param_names());
        names
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut params = self.decoder.params();
        params.extend(self.energy.params());
        self.names().into_iter().zip(params).collect()
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let names = self.names();
        let mut params = self.decoder.params_mut();
        params.extend(self.energy.params_mut());
        names.into_iter().zip(params).collect()
    }
}
