//! `key = value` run configuration.
//!
//! Resolution order is defaults, then the config file, then `--set`
//! overrides and dedicated flags. Unknown keys are rejected.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use lsdebm::models::{ModelKind, TrainConfig};
use lsdebm::networks::Likelihood;
use lsdebm::samplers::StepScale;

/// Bad invocation: malformed flags, config files or overrides. Mapped to
/// exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(UsageError(msg.into()))
}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    usage(msg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: Option<ModelKind>,
    pub train: TrainConfig,
    /// Write a checkpoint every this many epochs (0: initial and final only).
    pub save_every: usize,
    gaussian: bool,
    decoder_sigma: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: None,
            train: TrainConfig::default(),
            save_every: 0,
            gaussian: false,
            decoder_sigma: 1.0,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| config_err(format!("{key}: cannot parse {value:?}")))
}

fn list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| num(key, v.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "model" => self.model = Some(value.parse().map_err(|e: lsdebm::Error| config_err(e.to_string()))?),
            "epochs" => t.epochs = num(key, value)?,
            "batch_size" => t.batch_size = if value == "auto" { None } else { Some(num(key, value)?) },
            "save_every" => self.save_every = num(key, value)?,
            "seed" => t.seed = num(key, value)?,
            "lr_vae" => t.lr_vae = num(key, value)?,
            "lr_lebm" => t.lr_lebm = num(key, value)?,
            "lr_lsdebm" => t.lr_lsdebm = num(key, value)?,
            "lr_ebm2d" => t.lr_ebm2d = num(key, value)?,
            "latent_dim" => t.net.latent_dim = num(key, value)?,
            "hidden" => t.net.hidden = list(key, value)?,
            "energy_hidden" => t.net.energy_hidden = list(key, value)?,
            "likelihood" => {
                self.gaussian = match value {
                    "bernoulli" => false,
                    "gaussian" => true,
                    _ => return Err(config_err(format!("likelihood: expected bernoulli or gaussian, got {value:?}"))),
                }
            }
            "decoder_sigma" => self.decoder_sigma = num(key, value)?,
            "diffusion_steps" => t.diffusion_steps = num(key, value)?,
            "sigma_sq_min" => t.sigma_sq_min = num(key, value)?,
            "sigma_sq_max" => t.sigma_sq_max = num(key, value)?,
            "langevin_steps" => t.langevin_steps = num(key, value)?,
            "step_size" => t.step_size = num(key, value)?,
            "step_scale" => {
                t.step_scale = match value {
                    "fixed" => StepScale::Fixed,
                    "schedule" => StepScale::ScheduleVariance,
                    _ => return Err(config_err(format!("step_scale: expected fixed or schedule, got {value:?}"))),
                }
            }
            "infer_langevin_steps" => t.infer_langevin_steps = num(key, value)?,
            "lebm_prior_steps" => t.lebm_prior_steps = num(key, value)?,
            "lebm_prior_step_size" => t.lebm_prior_step_size = num(key, value)?,
            "lebm_posterior_steps" => t.lebm_posterior_steps = num(key, value)?,
            "lebm_posterior_step_size" => t.lebm_posterior_step_size = num(key, value)?,
            "lebm_infer_steps" => t.lebm_infer_steps = num(key, value)?,
            "energy_reg" => t.energy_reg = num(key, value)?,
            _ => return Err(config_err(format!("unknown config key {key:?}"))),
        }
        t.likelihood = if self.gaussian {
            Likelihood::Gaussian {
                sigma: self.decoder_sigma,
            }
        } else {
            Likelihood::BernoulliLogit
        };
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| config_err(format!("override {pair:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    /// Applies every line of a config file: `key = value`, `#` starts a
    /// comment, blank lines are ignored.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("{origin}:{}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| config_err(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// The fully resolved configuration in the file format.
    pub fn echo(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        if let Some(m) = self.model {
            kv("model", m.to_string());
        }
        kv("epochs", t.epochs.to_string());
        kv("batch_size", t.batch_size.map_or("auto".into(), |b| b.to_string()));
        kv("save_every", self.save_every.to_string());
        kv("seed", t.seed.to_string());
        kv("lr_vae", t.lr_vae.to_string());
        kv("lr_lebm", t.lr_lebm.to_string());
        kv("lr_lsdebm", t.lr_lsdebm.to_string());
        kv("lr_ebm2d", t.lr_ebm2d.to_string());
        kv("latent_dim", t.net.latent_dim.to_string());
        kv("hidden", join(&t.net.hidden));
        kv("energy_hidden", join(&t.net.energy_hidden));
        kv("likelihood", if self.gaussian { "gaussian" } else { "bernoulli" }.into());
        kv("decoder_sigma", self.decoder_sigma.to_string());
        kv("diffusion_steps", t.diffusion_steps.to_string());
        kv("sigma_sq_min", t.sigma_sq_min.to_string());
        kv("sigma_sq_max", t.sigma_sq_max.to_string());
        kv("langevin_steps", t.langevin_steps.to_string());
        kv("step_size", t.step_size.to_string());
        kv(
            "step_scale",
            match t.step_scale {
                StepScale::Fixed => "fixed",
                StepScale::ScheduleVariance => "schedule",
            }
            .into(),
        );
        kv("infer_langevin_steps", t.infer_langevin_steps.to_string());
        kv("lebm_prior_steps", t.lebm_prior_steps.to_string());
        kv("lebm_prior_step_size", t.lebm_prior_step_size.to_string());
        kv("lebm_posterior_steps", t.lebm_posterior_steps.to_string());
        kv("lebm_posterior_step_size", t.lebm_posterior_step_size.to_string());
        kv("lebm_infer_steps", t.lebm_infer_steps.to_string());
        kv("energy_reg", t.energy_reg.to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate().map_err(|e| config_err(e.to_string()))
    }
}
