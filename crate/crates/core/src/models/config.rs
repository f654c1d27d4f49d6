use std::fmt;
use std::str::FromStr;

use crate::error::{contract, Result};
use crate::networks::Likelihood;
use crate::samplers::{LangevinConfig, StepScale};
use crate::schedule::NoiseSchedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Vae,
    Ebm2d,
    Lebm,
    LsdEbm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Vae, ModelKind::Ebm2d, ModelKind::Lebm, ModelKind::LsdEbm];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Vae => "vae",
            ModelKind::Ebm2d => "ebm2d",
            ModelKind::Lebm => "lebm",
            ModelKind::LsdEbm => "lsdebm",
        }
    }

    /// Byte stored in checkpoints.
    pub fn code(self) -> u8 {
        match self {
            ModelKind::Vae => 0,
            ModelKind::Ebm2d => 1,
            ModelKind::Lebm => 2,
            ModelKind::LsdEbm => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        ModelKind::ALL.into_iter().find(|k| k.code() == code)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| contract(format!("unknown model kind {s:?} (expected vae, ebm2d, lebm or lsdebm)")))
    }
}

/// Network widths.
#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub latent_dim: usize,
    /// Encoder hidden widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub energy_hidden: Vec<usize>,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            latent_dim: 64,
            hidden: vec![1024, 256],
            energy_hidden: vec![256, 256],
        }
    }
}

impl NetConfig {
    pub fn decoder_hidden(&self) -> Vec<usize> {
        self.hidden.iter().rev().copied().collect()
    }
}

/// Hyperparameters of a training run.
///
/// Learning rates and batch sizes default to 2e-5 / 1e-4 / 2e-5 and
/// 4 / 2 / 4 for the VAE, LEBM and LSD-EBM.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Overrides the per-model default batch size.
    pub batch_size: Option<usize>,
    pub lr_vae: f64,
    pub lr_lebm: f64,
    pub lr_lsdebm: f64,
    pub lr_ebm2d: f64,
    pub net: NetConfig,
    pub likelihood: Likelihood,
    pub seed: u64,

    /// Diffusion steps `T` and the linear per-step variance range.
    pub diffusion_steps: usize,
    pub sigma_sq_min: f64,
    pub sigma_sq_max: f64,

    /// Langevin updates per chain during training (`K`) and step size.
    pub langevin_steps: usize,
    pub step_size: f64,
    pub step_scale: StepScale,
    /// Langevin updates per denoising step at inference.
    pub infer_langevin_steps: usize,

    /// LEBM prior / posterior chains (training) and posterior chain length
    /// at reconstruction.
    pub lebm_prior_steps: usize,
    pub lebm_prior_step_size: f64,
    pub lebm_posterior_steps: usize,
    pub lebm_posterior_step_size: f64,
    pub lebm_infer_steps: usize,

    /// Coefficient of `mean(E+^2 + E-^2)` added to contrastive energy losses.
    pub energy_reg: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: None,
            lr_vae: 2e-5,
            lr_lebm: 1e-4,
            lr_lsdebm: 2e-5,
            lr_ebm2d: 1e-4,
            net: NetConfig::default(),
            likelihood: Likelihood::BernoulliLogit,
            seed: 0,
            diffusion_steps: 20,
            sigma_sq_min: 1e-4,
            sigma_sq_max: 0.02,
            langevin_steps: 20,
            step_size: 0.1,
            step_scale: StepScale::ScheduleVariance,
            infer_langevin_steps: 50,
            lebm_prior_steps: 20,
            lebm_prior_step_size: 0.1,
            lebm_posterior_steps: 20,
            lebm_posterior_step_size: 0.1,
            lebm_infer_steps: 100,
            energy_reg: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn lr_for(&self, kind: ModelKind) -> f64 {
        match kind {
            ModelKind::Vae => self.lr_vae,
            ModelKind::Ebm2d => self.lr_ebm2d,
            ModelKind::Lebm => self.lr_lebm,
            ModelKind::LsdEbm => self.lr_lsdebm,
        }
    }

    pub fn batch_size_for(&self, kind: ModelKind) -> usize {
        self.batch_size.unwrap_or(match kind {
            ModelKind::Lebm => 2,
            _ => 4,
        })
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.diffusion_steps, self.sigma_sq_min, self.sigma_sq_max)
    }

    pub fn train_langevin(&self) -> LangevinConfig {
        LangevinConfig::new(self.langevin_steps, self.step_size).with_scale(self.step_scale)
    }

    pub fn infer_langevin(&self) -> LangevinConfig {
        LangevinConfig::new(self.infer_langevin_steps, self.step_size).with_scale(self.step_scale)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == Some(0) {
            return Err(contract("batch_size must be >= 1"));
        }
        for (name, lr) in [
            ("lr_vae", self.lr_vae),
            ("lr_lebm", self.lr_lebm),
            ("lr_lsdebm", self.lr_lsdebm),
            ("lr_ebm2d", self.lr_ebm2d),
        ] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(contract(format!("{name} must be a finite value >= 0, got {lr}")));
            }
        }
        if self.net.latent_dim == 0 || self.net.hidden.contains(&0) || self.net.energy_hidden.contains(&0) {
            return Err(contract("network widths must be positive"));
        }
        if let Likelihood::Gaussian { sigma } = self.likelihood {
            if !(sigma > 0.0) {
                return Err(contract(format!("decoder sigma must be > 0, got {sigma}")));
            }
        }
        self.schedule()?;
        self.train_langevin().validate()?;
        self.infer_langevin().validate()?;
        LangevinConfig::new(self.lebm_prior_steps, self.lebm_prior_step_size).validate()?;
        LangevinConfig::new(self.lebm_posterior_steps, self.lebm_posterior_step_size).validate()?;
        if !(self.energy_reg >= 0.0) {
            return Err(contract("energy_reg must be >= 0"));
        }
        Ok(())
    }
}
