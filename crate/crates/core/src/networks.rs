//! The inference network, the generation network and the energy function.
//!
//! All three are SiLU multilayer perceptrons over row-major batches
//! (`[batch, features]`).
//!
//! * [`Encoder`] maps `x` to a diagonal Gaussian `(mu, log_sigma)` over the
//!   latent. `log_sigma` is clamped to `[-10, 10]`.
//! * [`Decoder`] maps a latent to either Bernoulli logits (binary data) or the
//!   means of a fixed-variance Gaussian.
//! * [`EnergyNet`] is a scalar energy over latents (or images). When built
//!   with a step count it concatenates a learned 16-dimensional embedding of
//!   the diffusion step to its input.

use crate::autodiff::{sigmoid, Graph, Var};
use crate::error::{contract, Error, Result};
use crate::nn::{bind_tensor, BoundMlp, Mlp};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const LOG_SIGMA_MIN: f64 = -10.0;
pub const LOG_SIGMA_MAX: f64 = 10.0;
pub const TIME_EMBED_DIM: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Likelihood {
    /// Decoder emits logits; reconstruction loss is binary cross-entropy.
    BernoulliLogit,
    /// Decoder emits means of `N(mean, sigma^2 I)`.
    Gaussian { sigma: f64 },
}

impl Likelihood {
    /// Maps raw decoder output to the observation scale (probabilities or means).
    pub fn mean(self, raw: f64) -> f64 {
        match self {
            Likelihood::BernoulliLogit => sigmoid(raw),
            Likelihood::Gaussian { .. } => raw,
        }
    }
}

/// Negative log-likelihood of `x` under the decoder output `raw`, summed
/// over every entry (additive constants dropped).
pub fn recon_loss(g: &mut Graph, x: Var, raw: Var, mode: Likelihood) -> Result<Var> {
    if g.shape(x) != g.shape(raw) {
        return Err(Error::Shape {
            op: "recon_loss",
            lhs: g.shape(x).to_vec(),
            rhs: g.shape(raw).to_vec(),
        });
    }
    match mode {
        Likelihood::BernoulliLogit => {
            if let Some(bad) = g.value(x).data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(contract(format!(
                    "bernoulli likelihood needs targets in [0, 1], got {bad}"
                )));
            }
            // softplus(l) - x*l  ==  -[x log p + (1-x) log(1-p)]
            let sp = g.softplus(raw);
            let xl = g.mul(x, raw);
            let d = g.sub(sp, xl);
            Ok(g.sum(d))
        }
        Likelihood::Gaussian { sigma } => {
            let d = g.sub(x, raw);
            let sq = g.sq_norm(d);
            Ok(g.scale(sq, 0.5 / (sigma * sigma)))
        }
    }
}

/// Same quantity as [`recon_loss`] evaluated outside a graph.
pub fn recon_loss_value(x: &Tensor, raw: &Tensor, mode: Likelihood) -> Result<f64> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let rv = g.constant(raw.clone());
    let l = recon_loss(&mut g, xv, rv, mode)?;
    Ok(g.value(l).item())
}

fn check_cols(t: &Tensor, cols: usize, what: &'static str) -> Result<()> {
    if t.shape().len() != 2 || t.shape()[1] != cols {
        return Err(Error::Shape {
            op: what,
            lhs: t.shape().to_vec(),
            rhs: vec![t.shape().first().copied().unwrap_or(0), cols],
        });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub trunk: Mlp,
    pub mu_head: crate::nn::Linear,
    pub log_sigma_head: crate::nn::Linear,
}

/// Output of a non-graph encoder pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoding {
    pub z0: Tensor,
    pub mu: Tensor,
    pub log_sigma: Tensor,
}

pub struct BoundEncoder {
    trunk: BoundMlp,
    mu: (Var, Var),
    log_sigma: (Var, Var),
}

impl Encoder {
    /// `input_dim -> hidden... -> (mu, log_sigma)` of size `latent_dim`.
    pub fn new(input_dim: usize, hidden: &[usize], latent_dim: usize, rng: &mut Rng) -> Self {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        let last = *widths.last().expect("widths");
        Encoder {
            trunk: Mlp::new(&widths, true, rng),
            mu_head: crate::nn::Linear::new(last, latent_dim, rng),
            log_sigma_head: crate::nn::Linear::new(last, latent_dim, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.inputs()
    }

    pub fn latent_dim(&self) -> usize {
        self.mu_head.outputs()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundEncoder {
        let trunk = self.trunk.bind(g, trainable);
        let mu = (
            bind_tensor(g, &self.mu_head.weight, trainable),
            bind_tensor(g, &self.mu_head.bias, trainable),
        );
        let log_sigma = (
            bind_tensor(g, &self.log_sigma_head.weight, trainable),
            bind_tensor(g, &self.log_sigma_head.bias, trainable),
        );
        BoundEncoder {
            trunk,
            mu,
            log_sigma,
        }
    }

    /// Encodes a batch `[n, input_dim]`. With `deterministic` the latent is
    /// the mean; otherwise `z0 = mu + exp(log_sigma) * eps`.
    pub fn encode(&self, x: &Tensor, rng: &mut Rng, deterministic: bool) -> Result<Encoding> {
        check_cols(x, self.input_dim(), "encode")?;
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let (mu, ls) = bound.forward(&mut g, xv);
        let (mu, log_sigma) = (g.value(mu).clone(), g.value(ls).clone());
        let z0 = if deterministic {
            mu.clone()
        } else {
            let eps = Tensor::gaussian(rng, mu.shape().to_vec());
            reparameterize_values(&mu, &log_sigma, &eps)
        };
        Ok(Encoding { z0, mu, log_sigma })
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.trunk.params();
        p.extend([
            &self.mu_head.weight,
            &self.mu_head.bias,
            &self.log_sigma_head.weight,
            &self.log_sigma_head.bias,
        ]);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.trunk.params_mut();
        p.extend([
            &mut self.mu_head.weight,
            &mut self.mu_head.bias,
            &mut self.log_sigma_head.weight,
            &mut self.log_sigma_head.bias,
        ]);
        p
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut n = self.trunk.param_names("encoder.trunk");
        n.extend(
            ["mu.weight", "mu.bias", "log_sigma.weight", "log_sigma.bias"]
                .map(|s| format!("encoder.{s}")),
        );
        n
    }
}

impl BoundEncoder {
    /// Returns `(mu, log_sigma)` with `log_sigma` clamped.
    pub fn forward(&self, g: &mut Graph, x: Var) -> (Var, Var) {
        let h = self.trunk.forward(g, x);
        let mu = g.affine(h, self.mu.0, self.mu.1);
        let ls = g.affine(h, self.log_sigma.0, self.log_sigma.1);
        let ls = g.clamp(ls, LOG_SIGMA_MIN, LOG_SIGMA_MAX);
        (mu, ls)
    }

    pub fn param_vars(&self) -> Vec<Var> {
        let mut v = self.trunk.param_vars();
        v.extend([self.mu.0, self.mu.1, self.log_sigma.0, self.log_sigma.1]);
        v
    }
}

/// `mu + exp(log_sigma) * eps` on the graph; differentiable in both inputs.
pub fn reparameterize(g: &mut Graph, mu: Var, log_sigma: Var, eps: &Tensor) -> Var {
    let e = g.constant(eps.clone());
    let s = g.exp(log_sigma);
    let se = g.mul(s, e);
    g.add(mu, se)
}

pub fn reparameterize_values(mu: &Tensor, log_sigma: &Tensor, eps: &Tensor) -> Tensor {
    let data = mu
        .data()
        .iter()
        .zip(log_sigma.data())
        .zip(eps.data())
        .map(|((m, s), e)| m + s.exp() * e)
        .collect();
    Tensor::new(mu.shape().to_vec(), data).expect("same shape")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub mlp: Mlp,
    pub likelihood: Likelihood,
}

impl Decoder {
    /// `latent_dim -> hidden... -> output_dim`.
    pub fn new(
        latent_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        likelihood: Likelihood,
        rng: &mut Rng,
    ) -> Self {
        let mut widths = vec![latent_dim];
        widths.extend_from_slice(hidden);
        widths.push(output_dim);
        Decoder {
            mlp: Mlp::new(&widths, false, rng),
            likelihood,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.mlp.inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.mlp.outputs()
    }

    /// Raw decoder output (logits or means) for a batch of latents.
    pub fn raw(&self, z: &Tensor) -> Result<Tensor> {
        check_cols(z, self.latent_dim(), "decode")?;
        let mut g = Graph::new();
        let bound = self.mlp.bind(&mut g, false);
        let zv = g.constant(z.clone());
        let out = bound.forward(&mut g, zv);
        Ok(g.value(out).clone())
    }

    /// Probabilities (Bernoulli) or means (Gaussian).
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let mode = self.likelihood;
        Ok(self.raw(z)?.map(|v| mode.mean(v)))
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.mlp.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.mlp.params_mut()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.mlp.param_names("decoder")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyNet {
    /// `[T + 1, 16]` step embeddings; `None` for an unconditional energy.
    pub time_embedding: Option<Tensor>,
    pub mlp: Mlp,
}

pub struct BoundEnergy {
    embedding: Option<Var>,
    mlp: BoundMlp,
}

impl EnergyNet {
    /// Energy over `input_dim` vectors. `steps = Some(T)` adds a learned
    /// embedding for each `t` in `0..=T`.
    pub fn new(input_dim: usize, hidden: &[usize], steps: Option<usize>, rng: &mut Rng) -> Self {
        let time_embedding = steps.map(|t| Tensor::gaussian(rng, [t + 1, TIME_EMBED_DIM]));
        let extra = if steps.is_some() { TIME_EMBED_DIM } else { 0 };
        let mut widths = vec![input_dim + extra];
        widths.extend_from_slice(hidden);
        widths.push(1);
        EnergyNet {
            time_embedding,
            mlp: Mlp::new(&widths, false, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.inputs() - self.time_embedding.as_ref().map_or(0, |_| TIME_EMBED_DIM)
    }

    /// Largest accepted step index, if time-conditioned.
    pub fn max_step(&self) -> Option<usize> {
        self.time_embedding.as_ref().map(|e| e.rows() - 1)
    }

    fn check_step(&self, t: Option<usize>) -> Result<()> {
        match (self.max_step(), t) {
            (Some(max), Some(t)) if t <= max => Ok(()),
            (Some(max), Some(t)) => Err(contract(format!(
                "energy step t={t} outside embedding range 0..={max}"
            ))),
            (Some(_), None) => Err(contract("time-conditioned energy needs a step")),
            (None, Some(t)) => Err(contract(format!(
                "unconditional energy given step t={t}"
            ))),
            (None, None) => Ok(()),
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundEnergy {
        BoundEnergy {
            embedding: self
                .time_embedding
                .as_ref()
                .map(|e| bind_tensor(g, e, trainable)),
            mlp: self.mlp.bind(g, trainable),
        }
    }

    /// Per-row energies of a batch `[n, input_dim]`.
    pub fn energies(&self, z: &Tensor, t: Option<usize>) -> Result<Vec<f64>> {
        self.check_step(t)?;
        check_cols(z, self.input_dim(), "energy")?;
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let zv = g.constant(z.clone());
        let e = bound.forward(&mut g, zv, t)?;
        Ok(g.value(e).data().to_vec())
    }

    /// Per-row energies and `d(sum of energies)/dz`, which row by row is the
    /// gradient of each row's own energy.
    pub fn energy_grad(&self, z: &Tensor, t: Option<usize>) -> Result<(Vec<f64>, Tensor)> {
        self.check_step(t)?;
        check_cols(z, self.input_dim(), "energy")?;
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let zv = g.param(z.clone());
        let e = bound.forward(&mut g, zv, t)?;
        let total = g.sum(e);
        g.backward(total)?;
        let energies = g.value(e).data().to_vec();
        Ok((energies, g.grad(zv).expect("z requires grad")))
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p: Vec<&Tensor> = self.time_embedding.iter().collect();
        p.extend(self.mlp.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p: Vec<&mut Tensor> = self.time_embedding.iter_mut().collect();
        p.extend(self.mlp.params_mut());
        p
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut n: Vec<String> = self
            .time_embedding
            .iter()
            .map(|_| "energy.time_embedding".to_string())
            .collect();
        n.extend(self.mlp.param_names("energy.mlp"));
        n
    }
}

impl BoundEnergy {
    /// Energies as an `[n, 1]` node.
    pub fn forward(&self, g: &mut Graph, z: Var, t: Option<usize>) -> Result<Var> {
        let input = match (self.embedding, t) {
            (Some(table), Some(t)) => {
                let n = g.shape(z)[0];
                let emb = g.try_gather_rows(table, &vec![t; n])?;
                g.try_concat_cols(z, emb)?
            }
            (None, None) => z,
            _ => return Err(contract("energy step argument does not match network")),
        };
        Ok(self.mlp.forward(g, input))
    }

    pub fn param_vars(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.embedding.iter().copied().collect();
        v.extend(self.mlp.param_vars());
        v
    }
}

/// Collects the gradients of `vars` from a graph after `backward`.
///
/// Leaves that were unreachable from the loss get a zero gradient.
pub fn collect_grads(g: &mut Graph, vars: &[Var]) -> Vec<Option<Tensor>> {
    vars.iter()
        .map(|&v| {
            Some(
                g.take_grad(v)
                    .unwrap_or_else(|| Tensor::zeros(g.shape(v).to_vec())),
            )
        })
        .collect()
}
