//! The two model families: a fully-convolutional classifier and an MLP
//! forecaster. Both are twice differentiable with the default activation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Softplus,
    Tanh,
    /// Second derivative is zero almost everywhere; trains, but weakens the
    /// mixed-partial term of the right-reason gradient.
    Relu,
}

impl Activation {
    fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Softplus => x.softplus(),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.relu(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcnConfig {
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    pub num_classes: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl Default for FcnConfig {
    fn default() -> Self {
        Self { channels: vec![32, 64, 32], kernels: vec![7, 5, 3], num_classes: 2, activation: Activation::Softplus }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpConfig {
    pub fn new(lookback: usize, horizon: usize) -> Self {
        Self { lookback, horizon, hidden: vec![128, 128], activation: Activation::Softplus }
    }
}

/// Architecture descriptor; together with a flat parameter vector it fully
/// determines a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Fcn(FcnConfig),
    Mlp(MlpConfig),
}

impl Architecture {
    fn validate(&self) -> Result<()> {
        match self {
            Architecture::Fcn(c) => {
                if c.channels.is_empty() || c.channels.len() != c.kernels.len() {
                    return Err(Error::Config(format!(
                        "fcn needs one kernel per conv block, got {} channels and {} kernels",
                        c.channels.len(),
                        c.kernels.len()
                    )));
                }
                if c.channels.contains(&0) || c.kernels.contains(&0) || c.num_classes < 2 {
                    return Err(Error::Config("fcn widths, kernels must be positive and classes >= 2".into()));
                }
            }
            Architecture::Mlp(c) => {
                if c.lookback == 0 || c.horizon == 0 || c.hidden.contains(&0) {
                    return Err(Error::Config("mlp lookback, horizon and widths must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Shapes of the parameter tensors, in storage order (weight then bias
    /// per layer). Conv weights are `[kernel*c_in, c_out]`, biases `[1, c]`.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        match self {
            Architecture::Fcn(c) => {
                let mut c_in = 1;
                for (&c_out, &k) in c.channels.iter().zip(&c.kernels) {
                    shapes.push(vec![k * c_in, c_out]);
                    shapes.push(vec![1, c_out]);
                    c_in = c_out;
                }
                shapes.push(vec![c_in, c.num_classes]);
                shapes.push(vec![1, c.num_classes]);
            }
            Architecture::Mlp(c) => {
                let mut w_in = c.lookback;
                for &w in c.hidden.iter().chain(core::iter::once(&c.horizon)) {
                    shapes.push(vec![w_in, w]);
                    shapes.push(vec![1, w]);
                    w_in = w;
                }
            }
        }
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }

    pub fn output_len(&self) -> usize {
        match self {
            Architecture::Fcn(c) => c.num_classes,
            Architecture::Mlp(c) => c.horizon,
        }
    }

    /// Fixed input length, if the architecture has one.
    pub fn input_len(&self) -> Option<usize> {
        match self {
            Architecture::Fcn(_) => None,
            Architecture::Mlp(c) => Some(c.lookback),
        }
    }

    pub fn min_input_len(&self) -> usize {
        match self {
            Architecture::Fcn(c) => c.kernels.iter().copied().max().unwrap_or(1),
            Architecture::Mlp(c) => c.lookback,
        }
    }

    pub fn is_classifier(&self) -> bool {
        matches!(self, Architecture::Fcn(_))
    }
}

/// A model instance: architecture plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: Architecture,
    params: Vec<Tensor>,
}

impl Network {
    /// Glorot-uniform weights, zero biases, drawn from a seeded stream.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = arch
            .param_shapes()
            .into_iter()
            .enumerate()
            .map(|(i, shape)| {
                let n: usize = shape.iter().product();
                if i % 2 == 1 {
                    return Tensor::zeros(shape);
                }
                let bound = libm::sqrt(6.0 / (shape[0] + shape[1]) as f64);
                let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                Tensor::new(shape, data)
            })
            .collect();
        Ok(Self { arch, params })
    }

    pub fn from_flat(arch: Architecture, flat: &[f64]) -> Result<Self> {
        arch.validate()?;
        if flat.len() != arch.param_count() {
            return Err(Error::Shape(format!(
                "architecture needs {} parameters, payload has {}",
                arch.param_count(),
                flat.len()
            )));
        }
        let mut offset = 0;
        let params = arch
            .param_shapes()
            .into_iter()
            .map(|shape| {
                let n: usize = shape.iter().product();
                let t = Tensor::new(shape, flat[offset..offset + n].to_vec());
                offset += n;
                t
            })
            .collect();
        Ok(Self { arch, params })
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn output_len(&self) -> usize {
        self.arch.output_len()
    }

    pub fn check_input_len(&self, len: usize) -> Result<()> {
        match self.arch.input_len() {
            Some(expected) if expected != len => {
                Err(Error::Shape(format!("model expects inputs of length {expected}, got {len}")))
            }
            _ if len < self.arch.min_input_len() => {
                Err(Error::InputTooShort { got: len, min: self.arch.min_input_len() })
            }
            _ => Ok(()),
        }
    }

    /// Records the model's parameters on `tape` as differentiable leaves.
    pub fn param_vars<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.params.iter().map(|p| tape.param(p)).collect()
    }

    /// Records the parameters as constants (inference, explanations).
    pub fn const_vars<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.params.iter().map(|p| tape.constant(p.shape().to_vec(), p.data().to_vec())).collect()
    }

    /// Batched forward pass: `[batch, T] -> [batch, outputs]`.
    pub fn forward<'t>(&self, params: &[Var<'t>], x: Var<'t>) -> Var<'t> {
        let shape = x.shape();
        let (batch, len) = (shape[0], shape[1]);
        let layer = |h: Var<'t>, i: usize, rows: usize| h.matmul(params[2 * i]) + params[2 * i + 1].repeat_rows(rows);
        match &self.arch {
            Architecture::Fcn(c) => {
                let rows = batch * len;
                let mut h = x.reshape(vec![rows, 1]);
                for (i, &k) in c.kernels.iter().enumerate() {
                    h = c.activation.apply(layer(h.unfold(k, len), i, rows));
                }
                let pooled = h.group_sum_rows(len).scale(1.0 / len as f64);
                layer(pooled, c.kernels.len(), batch)
            }
            Architecture::Mlp(c) => {
                let mut h = x;
                for i in 0..c.hidden.len() {
                    h = c.activation.apply(layer(h, i, batch));
                }
                layer(h, c.hidden.len(), batch)
            }
        }
    }

    /// Inference on a batch of series.
    pub fn predict(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let Some(first) = inputs.first() else { return Ok(Vec::new()) };
        let len = first.len();
        self.check_input_len(len)?;
        if inputs.iter().any(|x| x.len() != len) {
            return Err(Error::Shape("batch holds series of different lengths".into()));
        }
        let out = self.output_len();
        let mut result = Vec::with_capacity(inputs.len());
        // bounded chunks keep the tape small
        for chunk in inputs.chunks(64) {
            let tape = Tape::new();
            let params = self.const_vars(&tape);
            let flat = chunk.iter().flat_map(|x| x.iter().copied()).collect();
            let y = self.forward(&params, tape.constant(vec![chunk.len(), len], flat));
            let values = y.value();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("model output"));
            }
            result.extend(values.chunks(out).map(|r| r.to_vec()));
        }
        Ok(result)
    }
}

/// Logits of a classifier for one series.
pub fn classify(model: &Network, x: &[f64]) -> Result<Vec<f64>> {
    if !model.arch.is_classifier() {
        return Err(Error::Config("classify needs a classifier".into()));
    }
    Ok(model.predict(&[x.to_vec()])?.remove(0))
}

/// Horizon prediction of a forecaster for one lookback window.
pub fn forecast(model: &Network, x: &[f64]) -> Result<Vec<f64>> {
    if model.arch.is_classifier() {
        return Err(Error::Config("forecast needs a forecaster".into()));
    }
    Ok(model.predict(&[x.to_vec()])?.remove(0))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| libm::exp(v - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
