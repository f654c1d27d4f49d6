//! The four generative models and their training loop.
//!
//! | kind     | latent prior                               | reconstruction path            |
//! |----------|--------------------------------------------|--------------------------------|
//! | `vae`    | `N(0, I)` with closed-form KL              | encode mean, decode            |
//! | `ebm2d`  | none (energy over images)                  | n/a (generation only)          |
//! | `lebm`   | `exp(-E(z)) N(z; 0, I)`                    | posterior Langevin, decode     |
//! | `lsdebm` | latent diffusion with conditional energies | encode, diffuse, denoise, decode |

mod config;
mod ebm2d;
mod lebm;
mod lsdebm;
mod vae;

pub use config::{ModelKind, NetConfig, TrainConfig};
pub use ebm2d::Ebm2dModel;
pub use lebm::LebmModel;
pub use lsdebm::{contrastive_update, LsdEbmModel};
pub use vae::{gaussian_kl, VaeModel};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::networks::collect_grads;
use crate::optim::AdamState;
use crate::rng::Rng;
use crate::samplers::{denoise_trajectory, lebm_posterior_chain, LangevinConfig, TraceDirection, VarianceTrace};
use crate::tensor::Tensor;

/// Losses of one training step, averaged over the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    /// Reconstruction negative log-likelihood per sample (0 for `ebm2d`).
    pub recon: f64,
    /// KL to the prior (`vae`) or negative posterior entropy term
    /// `-sum log sigma` (`lsdebm`); 0 otherwise.
    pub kl_or_entropy: f64,
    pub e_pos: f64,
    pub e_neg: f64,
    /// Diffusion step used by this batch (`lsdebm` only).
    pub t: Option<usize>,
}

impl LossReport {
    /// The quantity minimized by the encoder/decoder update.
    pub fn total(&self) -> f64 {
        self.recon + self.kl_or_entropy
    }

    fn all_finite(&self) -> bool {
        [self.recon, self.kl_or_entropy, self.e_pos, self.e_neg]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// A training-log row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub report: LossReport,
}

#[derive(Clone, Debug)]
pub enum Model {
    Vae(VaeModel),
    Ebm2d(Ebm2dModel),
    Lebm(LebmModel),
    LsdEbm(LsdEbmModel),
}

impl Model {
    /// Freshly initialized model for data vectors of length `data_dim`.
    pub fn new(kind: ModelKind, cfg: &TrainConfig, data_dim: usize, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(match kind {
            ModelKind::Vae => Model::Vae(VaeModel::new(cfg, data_dim, rng)),
            ModelKind::Ebm2d => Model::Ebm2d(Ebm2dModel::new(cfg, data_dim, rng)),
            ModelKind::Lebm => Model::Lebm(LebmModel::new(cfg, data_dim, rng)),
            ModelKind::LsdEbm => Model::LsdEbm(LsdEbmModel::new(cfg, data_dim, rng)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Vae(_) => ModelKind::Vae,
            Model::Ebm2d(_) => ModelKind::Ebm2d,
            Model::Lebm(_) => ModelKind::Lebm,
            Model::LsdEbm(_) => ModelKind::LsdEbm,
        }
    }

    pub fn data_dim(&self) -> usize {
        match self {
            Model::Vae(m) => m.decoder.output_dim(),
            Model::Ebm2d(m) => m.energy.input_dim(),
            Model::Lebm(m) => m.decoder.output_dim(),
            Model::LsdEbm(m) => m.decoder.output_dim(),
        }
    }

    pub fn train_step(&mut self, batch: &Tensor, rng: &mut Rng) -> Result<LossReport> {
        match self {
            Model::Vae(m) => m.train_step(batch, rng),
            Model::Ebm2d(m) => m.train_step(batch, rng),
            Model::Lebm(m) => m.train_step(batch, rng),
            Model::LsdEbm(m) => m.train_step(batch, rng),
        }
    }

    /// Reconstructs a batch of (possibly degraded) inputs. `steps` is the
    /// diffusion depth for `lsdebm` and the posterior chain length for
    /// `lebm`; the VAE ignores it.
    pub fn reconstruct(
        &self,
        x: &Tensor,
        steps: usize,
        rng: &mut Rng,
        trace: Option<&mut VarianceTrace>,
    ) -> Result<Tensor> {
        match self {
            Model::Vae(m) => m.reconstruct(x),
            Model::Ebm2d(_) => Err(Error::Contract(
                "the image-space EBM has no reconstruction path".into(),
            )),
            Model::Lebm(m) => m.reconstruct(x, steps, rng, trace),
            Model::LsdEbm(m) => m.reconstruct(x, steps, rng, trace),
        }
    }

    /// `n` samples on the observation scale.
    pub fn generate(&self, n: usize, rng: &mut Rng) -> Result<Tensor> {
        match self {
            Model::Vae(m) => m.generate(n, rng),
            Model::Ebm2d(m) => m.generate(n, rng),
            Model::Lebm(m) => m.generate(n, rng),
            Model::LsdEbm(m) => m.generate(n, rng),
        }
    }

    /// Parameters in canonical (checkpoint) order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        match self {
            Model::Vae(m) => m.named_params(),
            Model::Ebm2d(m) => m.named_params(),
            Model::Lebm(m) => m.named_params(),
            Model::LsdEbm(m) => m.named_params(),
        }
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match self {
            Model::Vae(m) => m.named_params_mut(),
            Model::Ebm2d(m) => m.named_params_mut(),
            Model::Lebm(m) => m.named_params_mut(),
            Model::LsdEbm(m) => m.named_params_mut(),
        }
    }

    /// Latent variance along the inference trajectory for one input `x`
    /// (`[1, data_dim]`), across `chains` independent chains. One value per
    /// denoising step (`lsdebm`, diffusion depth `steps`) or per posterior
    /// MCMC update (`lebm`, chain length `steps`).
    pub fn latent_trace(&self, x: &Tensor, chains: usize, steps: usize, rng: &mut Rng) -> Result<VarianceTrace> {
        if x.rows() != 1 {
            return Err(Error::Contract(format!("latent trace takes one input, got {}", x.rows())));
        }
        if chains < 2 {
            return Err(Error::Contract("latent trace needs at least 2 chains".into()));
        }
        let replicate = |row: &[f64]| Tensor::from_rows(&vec![row.to_vec(); chains]);
        match self {
            Model::LsdEbm(m) => {
                if steps == 0 || steps > m.schedule.steps() {
                    return Err(Error::Contract(format!(
                        "trace depth must be in 1..={}, got {steps}",
                        m.schedule.steps()
                    )));
                }
                let mu = m.encoder.encode(x, rng, true)?.mu;
                let z0 = replicate(mu.row(0))?;
                let z_top = m.schedule.forward_marginal(&z0, steps, rng)?;
                let mut trace = VarianceTrace::new(TraceDirection::Denoising);
                denoise_trajectory(&z_top, steps, &m.energy, &m.schedule, &m.infer_langevin, rng, Some(&mut trace))?;
                Ok(trace)
            }
            Model::Lebm(m) => {
                let xs = replicate(x.row(0))?;
                let cfg = LangevinConfig {
                    steps,
                    ..m.posterior_langevin
                };
                let init = Tensor::gaussian(rng, [chains, m.latent_dim()]);
                let mut trace = VarianceTrace::new(TraceDirection::Mcmc);
                lebm_posterior_chain(&init, &xs, &m.decoder, &m.energy, &cfg, rng, Some(&mut trace))?;
                Ok(trace)
            }
            _ => Err(Error::Contract(format!(
                "latent traces exist for lsdebm and lebm, not {}",
                self.kind()
            ))),
        }
    }

    pub fn as_lsdebm(&self) -> Option<&LsdEbmModel> {
        match self {
            Model::LsdEbm(m) => Some(m),
            _ => None,
        }
    }
}

/// Stacks the selected rows of `data` into a `[n, d]` batch.
pub fn batch_of(data: &[Vec<f64>], indices: &[usize]) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = indices.iter().map(|&i| data[i].clone()).collect();
    Tensor::from_rows(&rows)
}

/// Runs `cfg.epochs` epochs of shuffled mini-batches, passing every step's
/// losses to `log`. Returns the per-epoch mean of [`LossReport::total`].
pub fn fit(
    model: &mut Model,
    data: &[Vec<f64>],
    cfg: &TrainConfig,
    rng: &mut Rng,
    log: impl FnMut(LogRow),
) -> Result<Vec<f64>> {
    fit_with_hook(model, data, cfg, rng, log, |_, _| Ok(()))
}

/// [`fit`] with `epoch_end(epoch, model)` called after every epoch.
pub fn fit_with_hook(
    model: &mut Model,
    data: &[Vec<f64>],
    cfg: &TrainConfig,
    rng: &mut Rng,
    mut log: impl FnMut(LogRow),
    mut epoch_end: impl FnMut(usize, &Model) -> Result<()>,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    let batch_size = cfg.batch_size_for(model.kind());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_means = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut acc = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(batch_size).enumerate() {
            let batch = batch_of(data, chunk)?;
            let report = model.train_step(&batch, rng).map_err(|e| match e {
                Error::Training { t, .. } => Error::Training { epoch, batch: b, t },
                other => other,
            })?;
            if !report.all_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: b,
                    t: report.t,
                });
            }
            acc += report.total();
            batches += 1;
            log(LogRow {
                epoch,
                step,
                report,
            });
            step += 1;
        }
        epoch_means.push(acc / batches as f64);
        epoch_end(epoch, model)?;
    }
    Ok(epoch_means)
}

/// Reads leaf gradients for `vars`, releases the graph, then applies Adam to
/// `params` (same order as `vars`).
pub(crate) fn apply_update(
    mut g: Graph,
    vars: &[Var],
    params: Vec<&mut Tensor>,
    opt: &mut AdamState,
) -> Result<()> {
    let grads = collect_grads(&mut g, vars);
    drop(g);
    let mut params = params;
    opt.step(&mut params, &grads)
}
