use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(Activation::Identity),
            "tanh" => Some(Activation::Tanh),
            "sigmoid" => Some(Activation::Sigmoid),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Logistic function, branch form so neither side overflows for large `|x|`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `out_dim × in_dim`
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    /// Uniform init in `[-a, a]`, `a = sqrt(6 / (in + out))`, zero bias.
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let a = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = Matrix::from_fn(out_dim, in_dim, |_, _| rng.gen_range(-a..=a));
        DenseLayer {
            weight,
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        DenseLayer {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    fn pre_activation(&self, input: &Matrix) -> Result<Matrix> {
        if input.rows() != self.in_dim() {
            return Err(Error::shape("DenseLayer::forward", (self.in_dim(), input.cols()), input.shape()));
        }
        let mut z = self.weight.matmul(input)?;
        for (r, b) in self.bias.iter().enumerate() {
            for v in z.row_mut(r) {
                *v += b;
            }
        }
        Ok(z)
    }
}

#[derive(Clone, Debug)]
struct LayerCache {
    input: Matrix,
    pre: Matrix,
    post: Matrix,
}

/// Per-layer activations recorded by [`Mlp::forward`].
#[derive(Clone, Debug)]
pub struct Tape {
    caches: Vec<LayerCache>,
}

impl Tape {
    pub fn output(&self) -> Option<&Matrix> {
        self.caches.last().map(|c| &c.post)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            layers: mlp
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weight: Matrix::zeros(l.out_dim(), l.in_dim()),
                    bias: vec![0.0; l.out_dim()],
                })
                .collect(),
        }
    }

    pub fn accumulate(&mut self, other: &MlpGrads) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::shape("MlpGrads::accumulate", (self.layers.len(), 0), (other.layers.len(), 0)));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.add_scaled(&b.weight, 1.0)?;
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight.as_mut_slice().iter_mut().for_each(|v| *v *= s);
            l.bias.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|v| v.is_finite()))
    }
}

/// Feed-forward stack of dense layers; batches are `in_dim × n` (samples as columns).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("an Mlp needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(
                    "Mlp::new",
                    (i + 1, pair[0].out_dim()),
                    (i + 1, pair[1].in_dim()),
                ));
            }
        }
        Ok(Mlp { layers })
    }

    /// `dims = [in, h1, ..., out]`; hidden layers use `hidden`, the last uses `output`.
    pub fn build<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid("Mlp::build needs at least input and output dims"));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| DenseLayer::new(d[0], d[1], if i == last { output } else { hidden }, rng))
            .collect();
        Mlp::new(layers)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn forward(&self, input: &Matrix) -> Result<(Matrix, Tape)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut current = input.clone();
        for layer in &self.layers {
            let pre = layer.pre_activation(&current)?;
            let act = layer.activation;
            let post = pre.map(|v| act.apply(v));
            let next = post.clone();
            caches.push(LayerCache {
                input: current,
                pre,
                post,
            });
            current = next;
        }
        current.ensure_finite("Mlp::forward output")?;
        Ok((current, Tape { caches }))
    }

    /// Forward pass without recording a tape.
    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        let mut current = input.clone();
        for layer in &self.layers {
            let act = layer.activation;
            current = layer.pre_activation(&current)?.map(|v| act.apply(v));
        }
        current.ensure_finite("Mlp::predict output")?;
        Ok(current)
    }

    /// Returns gradients for every weight and bias plus the gradient w.r.t. the input.
    pub fn backward(&self, tape: &Tape, upstream: &Matrix) -> Result<(MlpGrads, Matrix)> {
        if tape.caches.len() != self.layers.len() {
            return Err(Error::invalid(format!(
                "tape has {} layers, network has {}",
                tape.caches.len(),
                self.layers.len()
            )));
        }
        let out = &tape.caches[tape.caches.len() - 1].post;
        if upstream.shape() != out.shape() {
            return Err(Error::shape("Mlp::backward", out.shape(), upstream.shape()));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.clone();
        for (layer, cache) in self.layers.iter().zip(&tape.caches).rev() {
            if cache.pre.rows() != layer.out_dim() || cache.input.rows() != layer.in_dim() {
                return Err(Error::invalid("tape does not match network layout"));
            }
            let act = layer.activation;
            if act != Activation::Identity {
                for ((d, &z), &a) in delta
                    .as_mut_slice()
                    .iter_mut()
                    .zip(cache.pre.as_slice())
                    .zip(cache.post.as_slice())
                {
                    *d *= act.derivative(z, a);
                }
            }
            let weight = delta.matmul_nt(&cache.input)?;
            let bias = delta.row_sums();
            let input_grad = layer.weight.matmul_tn(&delta)?;
            grads.push(LayerGrads { weight, bias });
            delta = input_grad;
        }
        grads.reverse();
        let grads = MlpGrads { layers: grads };
        if !grads.is_finite() || !delta.is_finite() {
            return Err(Error::NonFinite("Mlp::backward gradients".into()));
        }
        Ok((grads, delta))
    }

    /// `p ← p − lr·g` for every parameter.
    pub fn sgd_step(&mut self, grads: &MlpGrads, lr: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be finite and non-negative, got {lr}")));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::shape("Mlp::sgd_step", (self.layers.len(), 0), (grads.layers.len(), 0)));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("sgd_step gradient".into()));
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            super::grad::sgd_step(&mut layer.weight, &g.weight, lr)?;
            if g.bias.len() != layer.bias.len() {
                return Err(Error::shape("Mlp::sgd_step bias", (layer.bias.len(), 1), (g.bias.len(), 1)));
            }
            for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= lr * gb;
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameters flattened as `[W0 (row-major), b0, W1, b1, ...]`, the same order as [`MlpGrads::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape("Mlp::set_flat", (self.param_count(), 1), (flat.len(), 1)));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.as_mut_slice().copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }
}
