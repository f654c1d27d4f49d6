//! `LSDC` checkpoint container.
//!
//! ```text
//! "LSDC" | version u8 | model kind u8 | entry count u32
//! per entry: name length u16 | name (UTF-8) | rank u8 | dims u32 x rank | f32 data
//! ```
//!
//! Everything is little-endian. Entries are written in the model's canonical
//! parameter order followed by `meta.*` entries, so saving a loaded
//! checkpoint reproduces the file byte for byte. Parameters are stored as
//! `f32` and widened back to `f64` on load.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::Reader;
use crate::error::{format_err, Result};
use crate::models::{Ebm2dModel, LebmModel, LsdEbmModel, Model, ModelKind, VaeModel};
use crate::networks::{Decoder, Encoder, EnergyNet, Likelihood, TIME_EMBED_DIM};
use crate::nn::{Linear, Mlp};
use crate::optim::AdamState;
use crate::samplers::{LangevinConfig, StepScale};
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LSDC";
pub const CHECKPOINT_VERSION: u8 = 1;

/// Raw checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.push(self.kind.code());
        let count = u32::try_from(self.entries.len()).map_err(|_| format_err(6, "too many entries"))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, t) in &self.entries {
            let at = out.len() as u64;
            let len = u16::try_from(name.len()).map_err(|_| format_err(at, format!("entry name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let rank = u8::try_from(t.shape().len()).map_err(|_| format_err(at, format!("rank too large: {name}")))?;
            out.push(rank);
            for &d in t.shape() {
                let d = u32::try_from(d).map_err(|_| format_err(at, format!("dimension too large: {name}")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let magic = r.take(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(format_err(0, format!("bad magic {magic:02x?}, expected \"LSDC\"")));
        }
        let version = r.u8("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(format_err(
                4,
                format!("checkpoint version {version}, this build reads {CHECKPOINT_VERSION}"),
            ));
        }
        let code = r.u8("model kind")?;
        let kind = ModelKind::from_code(code).ok_or_else(|| format_err(5, format!("unknown model kind byte {code}")))?;
        let count = r.u32("entry count")?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let at = r.pos();
            let len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "entry name")?)
                .map_err(|_| format_err(at + 2, "entry name is not UTF-8"))?
                .to_string();
            let rank = r.u8("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("dimension")? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| format_err(at, format!("{name}: element count overflows")))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| format_err(at, "size overflow"))?, "tensor data")?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| format_err(at, format!("{name}: {e}")))?;
            if entries.iter().any(|(other, _): &(String, Tensor)| *other == name) {
                return Err(format_err(at, format!("duplicate entry {name}")));
            }
            entries.push((name, t));
        }
        if r.remaining() != 0 {
            return Err(format_err(r.pos(), format!("{} trailing bytes", r.remaining())));
        }
        Ok(Checkpoint { kind, entries })
    }
}

pub fn write_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.encode()?)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::decode(&fs::read(path)?)
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    write_checkpoint(path, &model_to_checkpoint(model))
}

/// Loads a model; `expected` rejects checkpoints of another kind.
pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<ModelKind>) -> Result<Model> {
    let ckpt = read_checkpoint(path)?;
    if let Some(kind) = expected {
        if kind != ckpt.kind {
            return Err(format_err(
                5,
                format!("checkpoint holds a {} model, expected {kind}", ckpt.kind),
            ));
        }
    }
    model_from_checkpoint(&ckpt)
}

fn likelihood_entry(l: Likelihood) -> Tensor {
    match l {
        Likelihood::BernoulliLogit => Tensor::from_vec(vec![0.0, 0.0]),
        Likelihood::Gaussian { sigma } => Tensor::from_vec(vec![1.0, sigma]),
    }
}

fn scale_code(s: StepScale) -> f64 {
    match s {
        StepScale::Fixed => 0.0,
        StepScale::ScheduleVariance => 1.0,
    }
}

fn langevin_entry(cfgs: &[&LangevinConfig]) -> Tensor {
    Tensor::from_vec(
        cfgs.iter()
            .flat_map(|c| [c.steps as f64, c.step_size, scale_code(c.scale)])
            .collect(),
    )
}

pub fn model_to_checkpoint(model: &Model) -> Checkpoint {
    let mut entries: Vec<(String, Tensor)> = model
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    let mut meta = |name: &str, t: Tensor| entries.push((format!("meta.{name}"), t));
    match model {
        Model::Vae(m) => meta("likelihood", likelihood_entry(m.decoder.likelihood)),
        Model::Ebm2d(m) => {
            meta("langevin", langevin_entry(&[&m.langevin]));
            meta("energy_reg", Tensor::from_vec(vec![m.energy_reg]));
        }
        Model::Lebm(m) => {
            meta("likelihood", likelihood_entry(m.decoder.likelihood));
            meta("langevin", langevin_entry(&[&m.prior_langevin, &m.posterior_langevin]));
            meta("energy_reg", Tensor::from_vec(vec![m.energy_reg]));
        }
        Model::LsdEbm(m) => {
            meta("likelihood", likelihood_entry(m.decoder.likelihood));
            meta("langevin", langevin_entry(&[&m.train_langevin, &m.infer_langevin]));
            meta("energy_reg", Tensor::from_vec(vec![m.energy_reg]));
            meta("schedule", Tensor::from_vec(m.schedule.sigma_sq_all().to_vec()));
        }
    }
    Checkpoint {
        kind: model.kind(),
        entries,
    }
}

/// Entry lookup that remembers which entries were used.
struct Entries<'a> {
    map: HashMap<&'a str, &'a Tensor>,
    used: Vec<&'a str>,
}

impl<'a> Entries<'a> {
    fn get(&mut self, name: &str) -> Result<Tensor> {
        match self.map.get_key_value(name) {
            Some((k, t)) => {
                self.used.push(k);
                Ok((*t).clone())
            }
            None => Err(format_err(6, format!("missing entry {name}"))),
        }
    }

    fn has(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    fn values(&mut self, name: &str, len: usize) -> Result<Vec<f64>> {
        let t = self.get(name)?;
        if t.len() != len {
            return Err(format_err(6, format!("{name} has {} values, expected {len}", t.len())));
        }
        Ok(t.into_vec())
    }

    fn linear(&mut self, prefix: &str) -> Result<Linear> {
        let weight = self.get(&format!("{prefix}.weight"))?;
        let bias = self.get(&format!("{prefix}.bias"))?;
        if weight.shape().len() != 2 || bias.shape() != [weight.shape()[1]] {
            return Err(format_err(
                6,
                format!(
                    "{prefix}: weight {:?} and bias {:?} do not form a layer",
                    weight.shape(),
                    bias.shape()
                ),
            ));
        }
        Ok(Linear { weight, bias })
    }

    fn mlp(&mut self, prefix: &str, activate_last: bool) -> Result<Mlp> {
        let mut layers: Vec<Linear> = Vec::new();
        let mut i = 0;
        while i == 0 || self.has(&format!("{prefix}.{i}.weight")) || self.has(&format!("{prefix}.{i}.bias")) {
            let layer = self.linear(&format!("{prefix}.{i}"))?;
            if let Some(prev) = layers.last() {
                if prev.outputs() != layer.inputs() {
                    return Err(format_err(
                        6,
                        format!("{prefix}.{i}: expects {} inputs, previous layer gives {}", layer.inputs(), prev.outputs()),
                    ));
                }
            }
            layers.push(layer);
            i += 1;
        }
        Ok(Mlp {
            layers,
            activate_last,
        })
    }

    fn likelihood(&mut self) -> Result<Likelihood> {
        let v = self.values("meta.likelihood", 2)?;
        match v[0] as u8 {
            0 => Ok(Likelihood::BernoulliLogit),
            1 if v[1] > 0.0 => Ok(Likelihood::Gaussian { sigma: v[1] }),
            _ => Err(format_err(6, format!("bad meta.likelihood {v:?}"))),
        }
    }

    fn langevin(&mut self, count: usize) -> Result<Vec<LangevinConfig>> {
        let v = self.values("meta.langevin", 3 * count)?;
        v.chunks(3)
            .map(|c| {
                let scale = match c[2] as u8 {
                    0 => StepScale::Fixed,
                    1 => StepScale::ScheduleVariance,
                    _ => return Err(format_err(6, format!("bad step scale code {}", c[2]))),
                };
                let cfg = LangevinConfig::new(c[0] as usize, c[1]).with_scale(scale);
                cfg.validate().map_err(|e| format_err(6, format!("meta.langevin: {e}")))?;
                Ok(cfg)
            })
            .collect()
    }

    fn energy(&mut self, conditional: bool) -> Result<EnergyNet> {
        let time_embedding = if conditional {
            Some(self.get("energy.time_embedding")?)
        } else {
            None
        };
        let mlp = self.mlp("energy.mlp", false)?;
        let extra = match &time_embedding {
            Some(t) if t.shape().len() != 2 || t.cols() != TIME_EMBED_DIM || t.rows() < 2 => {
                return Err(format_err(
                    6,
                    format!("energy.time_embedding has shape {:?}", t.shape()),
                ))
            }
            Some(_) => TIME_EMBED_DIM,
            None => 0,
        };
        if mlp.inputs() <= extra || mlp.outputs() != 1 {
            return Err(format_err(6, "energy.mlp has the wrong input or output size"));
        }
        Ok(EnergyNet { time_embedding, mlp })
    }

    fn encoder(&mut self) -> Result<Encoder> {
        Ok(Encoder {
            trunk: self.mlp("encoder.trunk", true)?,
            mu_head: self.linear("encoder.mu")?,
            log_sigma_head: self.linear("encoder.log_sigma")?,
        })
    }

    fn decoder(&mut self) -> Result<Decoder> {
        let mlp = self.mlp("decoder", false)?;
        Ok(Decoder {
            mlp,
            likelihood: self.likelihood()?,
        })
    }

    fn energy_reg(&mut self) -> Result<f64> {
        Ok(self.values("meta.energy_reg", 1)?[0])
    }
}

pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<Model> {
    let mut e = Entries {
        map: ckpt.entries.iter().map(|(n, t)| (n.as_str(), t)).collect(),
        used: Vec::new(),
    };
    let opt = || AdamState::new(0.0);
    let model = match ckpt.kind {
        ModelKind::Vae => {
            let encoder = e.encoder()?;
            let decoder = e.decoder()?;
            Model::Vae(VaeModel {
                encoder,
                decoder,
                opt: opt(),
            })
        }
        ModelKind::Ebm2d => {
            let energy = e.energy(false)?;
            let langevin = e.langevin(1)?.remove(0);
            Model::Ebm2d(Ebm2dModel {
                energy,
                langevin,
                energy_reg: e.energy_reg()?,
                opt: opt(),
            })
        }
        ModelKind::Lebm => {
            let decoder = e.decoder()?;
            let energy = e.energy(false)?;
            let l = e.langevin(2)?;
            Model::Lebm(LebmModel {
                decoder,
                energy,
                prior_langevin: l[0],
                posterior_langevin: l[1],
                energy_reg: e.energy_reg()?,
                opt_decoder: opt(),
                opt_energy: opt(),
            })
        }
        ModelKind::LsdEbm => {
            let encoder = e.encoder()?;
            let decoder = e.decoder()?;
            let energy = e.energy(true)?;
            let l = e.langevin(2)?;
            let sched = e.get("meta.schedule")?;
            let schedule = NoiseSchedule::from_sigma_sq(sched.into_vec())
                .map_err(|err| format_err(6, format!("meta.schedule: {err}")))?;
            Model::LsdEbm(LsdEbmModel {
                encoder,
                decoder,
                energy,
                schedule,
                train_langevin: l[0],
                infer_langevin: l[1],
                energy_reg: e.energy_reg()?,
                opt_autoencoder: opt(),
                opt_energy: opt(),
            })
        }
    };
    if let Some((name, _)) = ckpt.entries.iter().find(|(n, _)| !e.used.contains(&n.as_str())) {
        return Err(format_err(6, format!("unexpected entry {name}")));
    }
    check_consistency(&model)?;
    Ok(model)
}

fn check_consistency(model: &Model) -> Result<()> {
    let bad = |msg: String| Err(format_err(6, msg));
    let latent_ok = |enc: Option<&Encoder>, dec: Option<&Decoder>, en: Option<&EnergyNet>| {
        let dims: Vec<usize> = enc
            .map(|e| e.latent_dim())
            .into_iter()
            .chain(dec.map(|d| d.latent_dim()))
            .chain(en.map(|e| e.input_dim()))
            .collect();
        dims.windows(2).all(|w| w[0] == w[1])
    };
    match model {
        Model::Vae(m) => {
            if !latent_ok(Some(&m.encoder), Some(&m.decoder), None) || m.encoder.input_dim() != m.decoder.output_dim() {
                return bad("encoder and decoder sizes disagree".into());
            }
        }
        Model::Ebm2d(m) => {
            if m.energy.time_embedding.is_some() {
                return bad("image energy must be unconditional".into());
            }
        }
        Model::Lebm(m) => {
            if !latent_ok(None, Some(&m.decoder), Some(&m.energy)) || m.energy.time_embedding.is_some() {
                return bad("decoder and energy sizes disagree".into());
            }
        }
        Model::LsdEbm(m) => {
            if !latent_ok(Some(&m.encoder), Some(&m.decoder), Some(&m.energy))
                || m.encoder.input_dim() != m.decoder.output_dim()
                || m.energy.max_step() != Some(m.schedule.steps())
            {
                return bad("encoder, decoder, energy and schedule sizes disagree".into());
            }
        }
    }
    Ok(())
}
