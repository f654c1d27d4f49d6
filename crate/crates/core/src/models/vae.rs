use crate::autodiff::Graph;
use crate::error::Result;
use crate::models::{apply_update, LossReport, ModelKind, TrainConfig};
use crate::networks::{recon_loss, reparameterize, Decoder, Encoder};
use crate::optim::AdamState;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Gaussian-posterior autoencoder with a standard-normal prior.
#[derive(Clone, Debug)]
pub struct VaeModel {
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub opt: AdamState,
}

/// `½ Σ (mu² + sigma² - 1 - log sigma²)`.
pub fn gaussian_kl(mu: &Tensor, log_sigma: &Tensor) -> f64 {
    mu.data()
        .iter()
        .zip(log_sigma.data())
        .map(|(m, ls)| 0.5 * (m * m + (2.0 * ls).exp() - 1.0 - 2.0 * ls))
        .sum()
}

impl VaeModel {
    pub fn new(cfg: &TrainConfig, data_dim: usize, rng: &mut Rng) -> Self {
        let net = &cfg.net;
        VaeModel {
            encoder: Encoder::new(data_dim, &net.hidden, net.latent_dim, rng),
            decoder: Decoder::new(net.latent_dim, &net.decoder_hidden(), data_dim, cfg.likelihood, rng),
            opt: AdamState::new(cfg.lr_for(ModelKind::Vae)),
        }
    }

    pub fn from_parts(encoder: Encoder, decoder: Decoder, lr: f64) -> Self {
        VaeModel {
            encoder,
            decoder,
            opt: AdamState::new(lr),
        }
    }

    /// One ELBO step: reparameterized reconstruction plus closed-form KL.
    pub fn train_step(&mut self, x: &Tensor, rng: &mut Rng) -> Result<LossReport> {
        let n = x.rows() as f64;
        let mut g = Graph::new();
        let enc = self.encoder.bind(&mut g, true);
        let dec = self.decoder.mlp.bind(&mut g, true);
        let xv = g.constant(x.clone());
        let (mu, ls) = enc.forward(&mut g, xv);
        let eps = Tensor::gaussian(rng, g.shape(mu).to_vec());
        let z = reparameterize(&mut g, mu, ls, &eps);
        let raw = dec.forward(&mut g, z);
        let recon = recon_loss(&mut g, xv, raw, self.decoder.likelihood)?;

        // KL = ½ Σ (mu² + exp(2 ls) - 1 - 2 ls)
        let mu_sq = g.sq_norm(mu);
        let two_ls = g.scale(ls, 2.0);
        let var = g.exp(two_ls);
        let var_sum = g.sum(var);
        let ls_sum = g.sum(ls);
        let ls_term = g.scale(ls_sum, -2.0);
        let kl = g.add(mu_sq, var_sum);
        let kl = g.add(kl, ls_term);
        let count = g.value(mu).len() as f64;
        let kl = g.add_scalar(kl, -count);
        let kl = g.scale(kl, 0.5);

        let total = g.add(recon, kl);
        let loss = g.scale(total, 1.0 / n);
        g.backward(loss)?;

        let report = LossReport {
            recon: g.value(recon).item() / n,
            kl_or_entropy: g.value(kl).item() / n,
            ..LossReport::default()
        };
        let mut vars = enc.param_vars();
        vars.extend(dec.param_vars());
        let mut params = self.encoder.params_mut();
        params.extend(self.decoder.params_mut());
        apply_update(g, &vars, params, &mut self.opt)?;
        Ok(report)
    }

    /// Decodes the posterior mean.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        let enc = self.encoder.encode(x, &mut Rng::new(0), true)?;
        self.decoder.decode(&enc.mu)
    }

    pub fn generate(&self, n: usize, rng: &mut Rng) -> Result<Tensor> {
        let z = Tensor::gaussian(rng, [n, self.decoder.latent_dim()]);
        self.decoder.decode(&z)
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut names = self.encoder.param_names();
        names.extend(self.decoder.param_names());
        let mut params = self.encoder.params();
        params.extend(self.decoder.params());
        names.into_iter().zip(params).collect()
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut names = self.encoder.param_names();
        names.extend(self.decoder.param_names());
        let mut params = self.encoder.params_mut();
        params.extend(self.decoder.params_mut());
        names.into_iter().zip(params).collect()
    }
}
