//! Multi-layer perceptrons with plain and tape forward passes.

use rand::Rng;

use crate::autodiff::{sigmoid, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    LeakyRelu(f64),
    Silu,
}

impl Activation {
    pub fn apply(self, xs: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::LeakyRelu(slope) => xs
                .iter_mut()
                .for_each(|v| *v = if *v > 0.0 { *v } else { slope * *v }),
            Activation::Silu => xs.iter_mut().for_each(|v| *v *= sigmoid(*v)),
        }
    }

    pub fn apply_tape(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::LeakyRelu(slope) => tape.leaky_relu(x, slope),
            Activation::Silu => tape.silu(x),
        }
    }
}

/// Affine layer `x W + b` with `W: in x out`, `b: 1 x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

/// Perceptron with `activation` between layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

/// Tape handles of an [`Mlp`]'s parameters, `(weight, bias)` per layer.
#[derive(Debug, Clone)]
pub struct MlpVars {
    pub layers: Vec<(Var, Var)>,
    pub activation: Activation,
}

impl Mlp {
    /// Layer widths `widths[0] -> widths[1] -> ... -> widths[k]`; zero biases.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], activation: Activation, rng: &mut R) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| Linear {
                weight: Matrix::glorot_uniform(w[0], w[1], rng),
                bias: Matrix::zeros(1, w[1]),
            })
            .collect();
        Self { layers, activation }
    }

    pub fn in_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.rows())
    }

    pub fn out_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.cols())
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_width() {
            return Err(Error::Shape(format!(
                "perceptron expects width {}, got {}",
                self.in_width(),
                x.cols()
            )));
        }
        let mut h = x.clone();
        let last = self.layers.len().saturating_sub(1);
        for (k, layer) in self.layers.iter().enumerate() {
            let mut next = h.matmul(&layer.weight)?;
            for r in 0..next.rows() {
                for (v, b) in next.row_mut(r).iter_mut().zip(layer.bias.data()) {
                    *v += b;
                }
            }
            if k < last {
                self.activation.apply(next.data_mut());
            }
            h = next;
        }
        Ok(h)
    }

    pub fn register(&self, tape: &mut Tape) -> MlpVars {
        MlpVars {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.param(l.weight.clone()), tape.param(l.bias.clone())))
                .collect(),
            activation: self.activation,
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }
}

impl MlpVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let mut h = x;
        let last = self.layers.len().saturating_sub(1);
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            let z = tape.matmul(h, w);
            let z = tape.add_row_bias(z, b);
            h = if k < last {
                self.activation.apply_tape(tape, z)
            } else {
                z
            };
        }
        h
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}
