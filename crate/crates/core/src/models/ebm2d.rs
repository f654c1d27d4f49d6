//! Image-space EBM: a single energy over pixels, negatives from Langevin
//! chains started at uniform noise.

use crate::error::Result;
use crate::models::lsdebm::contrastive_update;
use crate::models::{LossReport, ModelKind, TrainConfig};
use crate::networks::EnergyNet;
use crate::optim::AdamState;
use crate::rng::Rng;
use crate::samplers::{langevin_image_ebm, LangevinConfig};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Ebm2dModel {
    pub energy: EnergyNet,
    pub langevin: LangevinConfig,
    pub energy_reg: f64,
    pub opt: AdamState,
}

impl Ebm2dModel {
    pub fn new(cfg: &TrainConfig, data_dim: usize, rng: &mut Rng) -> Self {
        let energy = EnergyNet::new(data_dim, &cfg.net.energy_hidden, None, rng);
        Self::from_parts(energy, cfg)
    }

    pub fn from_parts(energy: EnergyNet, cfg: &TrainConfig) -> Self {
        Ebm2dModel {
            energy,
            langevin: LangevinConfig::new(cfg.langevin_steps, cfg.step_size),
            energy_reg: cfg.energy_reg,
            opt: AdamState::new(cfg.lr_for(ModelKind::Ebm2d)),
        }
    }

    pub fn train_step(&mut self, x: &Tensor, rng: &mut Rng) -> Result<LossReport> {
        let negatives = self.sample(x.rows(), rng)?;
        let (e_pos, e_neg) =
            contrastive_update(&mut self.energy, &mut self.opt, x, &negatives, None, self.energy_reg)?;
        Ok(LossReport {
            e_pos,
            e_neg,
            ..LossReport::default()
        })
    }

    /// Raw chain states from uniform-noise initializations.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Tensor> {
        let init = Tensor::uniform(rng, [n, self.energy.input_dim()], 0.0, 1.0);
        langevin_image_ebm(&init, &self.energy, &self.langevin, rng)
    }

    /// Chain states clipped to the pixel range `[0, 1]`.
    pub fn generate(&self, n: usize, rng: &mut Rng) -> Result<Tensor> {
        Ok(self.sample(n, rng)?.map(|v| v.clamp(0.0, 1.0)))
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.energy.param_names().into_iter().zip(self.energy.params()).collect()
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.energy
            .param_names()
            .into_iter()
            .zip(self.energy.params_mut())
            .collect()
    }
}
