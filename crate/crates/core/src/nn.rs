//! Dense layers and multilayer perceptrons.
//!
//! Parameters live outside any graph. [`Mlp::bind`] pushes them onto a
//! [`Graph`] as leaves (a reference-count bump per tensor) and returns a
//! [`BoundMlp`] that can run forward passes on that graph.

use crate::autodiff::{Graph, Var};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Fan-in scaled uniform weights, zero bias.
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Linear {
            weight: Tensor::uniform(rng, [inputs, outputs], -bound, bound),
            bias: Tensor::zeros([outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    /// Apply SiLU after the last layer too.
    pub activate_last: bool,
}

#[derive(Clone, Debug)]
pub struct BoundMlp {
    layers: Vec<(Var, Var)>,
    activate_last: bool,
}

impl Mlp {
    /// `widths = [in, h1, ..., out]`.
    pub fn new(widths: &[usize], activate_last: bool, rng: &mut Rng) -> Self {
        let layers = widths.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect();
        Mlp {
            layers,
            activate_last,
        }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().expect("non-empty mlp").outputs()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundMlp {
        let layers = self
            .layers
            .iter()
            .map(|l| bind_pair(g, &l.weight, &l.bias, trainable))
            .collect();
        BoundMlp {
            layers,
            activate_last: self.activate_last,
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("{prefix}.{i}.weight"), format!("{prefix}.{i}.bias")])
            .collect()
    }
}

impl BoundMlp {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = g.affine(h, w, b);
            if i < last || self.activate_last {
                h = g.silu(h);
            }
        }
        h
    }

    pub fn param_vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

fn bind_pair(g: &mut Graph, w: &Tensor, b: &Tensor, trainable: bool) -> (Var, Var) {
    if trainable {
        (g.param(w.clone()), g.param(b.clone()))
    } else {
        (g.constant(w.clone()), g.constant(b.clone()))
    }
}

pub(crate) fn bind_tensor(g: &mut Graph, t: &Tensor, trainable: bool) -> Var {
    if trainable {
        g.param(t.clone())
    } else {
        g.constant(t.clone())
    }
}
