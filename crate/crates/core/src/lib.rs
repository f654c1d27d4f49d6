//! Latent-space diffusion energy-based models for binary volumes.
//!
//! The crate carries its own reverse-mode autodiff, the noise schedule and
//! Langevin samplers, the VAE, latent EBM, pixel EBM and LSD-EBM models,
//! segmentation metrics, synthetic data and the `.voxb` / `.lsdc` formats.
//!
//! ```
//! use lsdebm::data::gen_vertebra_dataset;
//! use lsdebm::models::{Model, ModelKind, TrainConfig};
//! use lsdebm::{Rng, Tensor};
//!
//! let grids = gen_vertebra_dataset(2, [8, 8, 8], 0)?;
//! let x = Tensor::from_rows(&grids.iter().map(|g| g.to_values()).collect::<Vec<_>>())?;
//! let model = Model::new(ModelKind::Vae, &TrainConfig::default(), 512, &mut Rng::new(1))?;
//! assert_eq!(model.reconstruct(&x, 0, &mut Rng::new(2), None)?.shape(), x.shape());
//! # Ok::<(), lsdebm::Error>(())
//! ```

pub mod autodiff;
pub mod data;
pub mod error;
pub mod io;
pub mod metrics;
pub mod models;
pub mod networks;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod samplers;
pub mod schedule;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
mod readme {}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/diffusion.md")]
    mod diffusion {}
    #[doc = include_str!("../../../book/src/langevin.md")]
    mod langevin {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
}
