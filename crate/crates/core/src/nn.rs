//! The image classifier and the adversary networks.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Activation, Graph, Var};
use crate::{Error, Result, Tensor};

pub const IMAGE_SIZE: usize = 8;
pub const CHANNELS: usize = 3;
pub const CONV_CHANNELS: usize = 16;
pub const KERNEL: usize = 3;
pub const HIDDEN: usize = 128;
pub const CLASSES: usize = 2;
/// Width of the flattened output of the second convolution (16 x 4 x 4).
pub const FEATURES: usize = CONV_CHANNELS * (IMAGE_SIZE - 2 * (KERNEL - 1)) * (IMAGE_SIZE - 2 * (KERNEL - 1));
pub const ADVERSARY_HIDDEN: usize = 1024;

/// Which intermediate output of the classifier is used as the representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tap {
    ConvFeatures,
    Logits,
    Softmax,
}

impl Tap {
    pub fn name(self) -> &'static str {
        match self {
            Tap::ConvFeatures => "conv_features",
            Tap::Logits => "logits",
            Tap::Softmax => "softmax",
        }
    }

    pub fn parse(s: &str) -> Option<Tap> {
        match s {
            "conv_features" => Some(Tap::ConvFeatures),
            "logits" => Some(Tap::Logits),
            "softmax" => Some(Tap::Softmax),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            Tap::ConvFeatures => FEATURES,
            Tap::Logits | Tap::Softmax => CLASSES,
        }
    }
}

/// Uniform initialisation in `[-bound, bound]`.
fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-bound..=bound);
    }
    t
}

fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    uniform(shape, libm::sqrt(6.0 / fan_in as f64), rng)
}

fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    uniform(shape, libm::sqrt(6.0 / (fan_in + fan_out) as f64), rng)
}

/// Parameters registered in a graph, in the owner's canonical order.
pub fn register(g: &mut Graph, params: &[Tensor], trainable: bool) -> Vec<Var> {
    params
        .iter()
        .map(|p| if trainable { g.param(p.clone()) } else { g.constant(p.clone()) })
        .collect()
}

fn check_shapes(names: &[&str], expected: &[Vec<usize>], params: &[Tensor]) -> Result<()> {
    if params.len() != expected.len() {
        return Err(Error::Config(alloc::format!(
            "expected {} parameter tensors, got {}",
            expected.len(),
            params.len()
        )));
    }
    for ((name, shape), p) in names.iter().zip(expected).zip(params) {
        if p.shape() != shape.as_slice() {
            return Err(Error::Config(alloc::format!(
                "parameter {name} has shape {:?}, expected {shape:?}",
                p.shape()
            )));
        }
    }
    Ok(())
}

/// Outputs of one classifier forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ClassifierOutputs {
    /// Flattened activations after the second convolution, `batch x 256`.
    pub conv_features: Var,
    pub logits: Var,
    pub softmax: Var,
}

impl ClassifierOutputs {
    pub fn tap(&self, tap: Tap) -> Var {
        match tap {
            Tap::ConvFeatures => self.conv_features,
            Tap::Logits => self.logits,
            Tap::Softmax => self.softmax,
        }
    }
}

/// Plain tensors produced by [`Classifier::predict`].
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub conv_features: Tensor,
    pub logits: Tensor,
    pub softmax: Tensor,
}

impl Predictions {
    pub fn tap(&self, tap: Tap) -> &Tensor {
        match tap {
            Tap::ConvFeatures => &self.conv_features,
            Tap::Logits => &self.logits,
            Tap::Softmax => &self.softmax,
        }
    }

    /// Arg-max class per row (ties go to the lower class).
    pub fn classes(&self) -> Vec<usize> {
        let (rows, cols) = self.softmax.dims2().expect("softmax is a matrix");
        (0..rows)
            .map(|r| {
                let row = &self.softmax.data()[r * cols..(r + 1) * cols];
                (0..cols).fold(0, |best, c| if row[c] > row[best] { c } else { best })
            })
            .collect()
    }
}

/// Two 3x3 convolutions (16 filters each, ReLU), a 128-unit ReLU layer and a
/// two-way softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub params: Vec<Tensor>,
}

impl Classifier {
    pub const PARAM_NAMES: [&'static str; 8] = [
        "conv1.weight",
        "conv1.bias",
        "conv2.weight",
        "conv2.bias",
        "dense1.weight",
        "dense1.bias",
        "dense2.weight",
        "dense2.bias",
    ];

    pub fn param_shapes() -> Vec<Vec<usize>> {
        vec![
            vec![CONV_CHANNELS, CHANNELS, KERNEL, KERNEL],
            vec![CONV_CHANNELS],
            vec![CONV_CHANNELS, CONV_CHANNELS, KERNEL, KERNEL],
            vec![CONV_CHANNELS],
            vec![HIDDEN, FEATURES],
            vec![HIDDEN],
            vec![CLASSES, HIDDEN],
            vec![CLASSES],
        ]
    }

    /// He-uniform for the ReLU layers, Glorot-uniform for the softmax head,
    /// zero biases.
    pub fn new(rng: &mut impl Rng) -> Self {
        let shapes = Self::param_shapes();
        let conv1_fan = CHANNELS * KERNEL * KERNEL;
        let conv2_fan = CONV_CHANNELS * KERNEL * KERNEL;
        let params = vec![
            he_uniform(&shapes[0], conv1_fan, rng),
            Tensor::zeros(&shapes[1]),
            he_uniform(&shapes[2], conv2_fan, rng),
            Tensor::zeros(&shapes[3]),
            he_uniform(&shapes[4], FEATURES, rng),
            Tensor::zeros(&shapes[5]),
            glorot_uniform(&shapes[6], HIDDEN, CLASSES, rng),
            Tensor::zeros(&shapes[7]),
        ];
        Classifier { params }
    }

    pub fn from_params(params: Vec<Tensor>) -> Result<Self> {
        check_shapes(&Self::PARAM_NAMES, &Self::param_shapes(), &params)?;
        Ok(Classifier { params })
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&'static str, &Tensor)> {
        Self::PARAM_NAMES.iter().copied().zip(&self.params)
    }

    /// Records a forward pass over `images: batch x 3 x 8 x 8`.
    pub fn forward(g: &mut Graph, params: &[Var], images: Var) -> Result<ClassifierOutputs> {
        let batch = g.value(images).shape()[0];
        let c1 = g.conv2d(images, params[0], params[1])?;
        let c1 = g.relu(c1);
        let c2 = g.conv2d(c1, params[2], params[3])?;
        let c2 = g.relu(c2);
        let conv_features = g.reshape(c2, &[batch, FEATURES])?;
        let h = g.dense(conv_features, params[4], params[5], Activation::Relu)?;
        let logits = g.linear(h, params[6], params[7])?;
        let softmax = g.softmax_rows(logits)?;
        Ok(ClassifierOutputs {
            conv_features,
            logits,
            softmax,
        })
    }

    /// Forward pass without gradients.
    pub fn predict(&self, images: &Tensor) -> Result<Predictions> {
        let mut g = Graph::new();
        let vars = register(&mut g, &self.params, false);
        let x = g.constant(images.clone());
        let out = Self::forward(&mut g, &vars, x)?;
        Ok(Predictions {
            conv_features: g.value(out.conv_features).clone(),
            logits: g.value(out.logits).clone(),
            softmax: g.value(out.softmax).clone(),
        })
    }
}

/// `x -> w2 relu(W1 x + b1) + b2` with a scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub params: Vec<Tensor>,
}

impl Mlp {
    pub const PARAM_NAMES: [&'static str; 4] = ["hidden.weight", "hidden.bias", "out.weight", "out.bias"];

    pub fn new(input_dim: usize, rng: &mut impl Rng) -> Self {
        Mlp {
            params: vec![
                he_uniform(&[ADVERSARY_HIDDEN, input_dim], input_dim, rng),
                Tensor::zeros(&[ADVERSARY_HIDDEN]),
                glorot_uniform(&[1, ADVERSARY_HIDDEN], ADVERSARY_HIDDEN, 1, rng),
                Tensor::zeros(&[1]),
            ],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.params[0].shape()[1]
    }

    pub fn from_params(params: Vec<Tensor>) -> Result<Self> {
        let input = params.first().and_then(|p| p.shape().get(1).copied()).unwrap_or(0);
        let shapes = vec![vec![ADVERSARY_HIDDEN, input], vec![ADVERSARY_HIDDEN], vec![1, ADVERSARY_HIDDEN], vec![1]];
        check_shapes(&Self::PARAM_NAMES, &shapes, &params)?;
        Ok(Mlp { params })
    }

    pub fn named_params(&self) -> impl Iterator<Item = (String, &Tensor)> {
        Self::PARAM_NAMES.iter().map(|n| String::from(*n)).zip(&self.params)
    }

    /// Records `batch x in -> batch x 1`.
    pub fn forward(g: &mut Graph, params: &[Var], x: Var) -> Result<Var> {
        let h = g.dense(x, params[0], params[1], Activation::Relu)?;
        g.linear(h, params[2], params[3])
    }

    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = register(&mut g, &self.params, false);
        let xv = g.constant(x.clone());
        let y = Self::forward(&mut g, &vars, xv)?;
        Ok(g.value(y).clone())
    }
}
