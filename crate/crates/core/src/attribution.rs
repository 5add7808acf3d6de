//! Modified Integrated Gradients and its frequency-domain view.
//!
//! The attribution of a scalar output `f` is
//! `e(x) = |x − x̄| ⊙ (1/M) Σ_s ∂f/∂x̃ (x̄ + α_s (x − x̄))` with midpoint steps
//! `α_s = (s − ½)/M`. Everything is recorded on the tape, so `e(x)` stays
//! differentiable with respect to the model parameters.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{dft, ComplexVector, GradMode, Tape, Var};
use crate::error::{Error, Result};
use crate::models::{argmax, Network};

pub const DISPLAY_STEPS: usize = 32;
pub const TRAINING_STEPS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IgConfig {
    /// Integration steps `M`.
    pub steps: usize,
    /// Baseline `x̄`; `None` means all zeros.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Vec<f64>>,
    /// For classifiers, explain a class logit minus the mean logit. Softmax
    /// only sees these differences, so a model cannot hide a feature from the
    /// explanation by routing it through the other classes' logits.
    #[serde(default = "yes")]
    pub centered: bool,
}

fn yes() -> bool {
    true
}

impl Default for IgConfig {
    fn default() -> Self {
        Self { steps: DISPLAY_STEPS, baseline: None, centered: true }
    }
}

impl IgConfig {
    pub fn with_steps(steps: usize) -> Self {
        Self { steps, baseline: None, centered: true }
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("integration steps must be at least 1".into()));
        }
        match &self.baseline {
            Some(b) if b.len() != len => {
                Err(Error::Shape(alloc::format!("baseline has length {}, input has {len}", b.len())))
            }
            _ => Ok(()),
        }
    }

    fn baseline_at(&self, t: usize) -> f64 {
        self.baseline.as_ref().map_or(0.0, |b| b[t])
    }
}

/// Which scalar of the model output is explained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum AttributionTarget {
    /// A given output, a class logit or one forecast step.
    Output(usize),
    /// The highest logit at `x`.
    Argmax,
    /// The mean over all outputs, used for forecasters.
    OutputMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub values: Vec<f64>,
    pub target: AttributionTarget,
}

impl Attribution {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Share of `Σ|e|` that falls on the marked positions.
    pub fn mass_fraction(&self, mask: &[bool]) -> f64 {
        let total: f64 = self.values.iter().map(|v| v.abs()).sum();
        if total == 0.0 {
            return 0.0;
        }
        let inside: f64 = self.values.iter().zip(mask).filter(|(_, m)| **m).map(|(v, _)| v.abs()).sum();
        inside / total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyAttribution {
    pub spectrum: ComplexVector,
}

/// Weights on the model outputs whose weighted sum is explained; `centered`
/// subtracts the mean output from a single selected one.
pub fn selector(target: AttributionTarget, output: &[f64], centered: bool) -> Vec<f64> {
    let n = output.len();
    match target {
        AttributionTarget::Output(i) => {
            let shift = if centered { 1.0 / n as f64 } else { 0.0 };
            let mut s = vec![-shift; n];
            s[i] += 1.0;
            s
        }
        AttributionTarget::Argmax => selector(AttributionTarget::Output(argmax(output)), output, centered),
        AttributionTarget::OutputMean => vec![1.0 / n as f64; n],
    }
}

/// Differentiable attributions for a batch `[B, T]` given per-sample output
/// weights `[B, outputs]`; returns `[B, T]`.
///
/// Explaining `Σ_i w_i f_i` equals the weighted sum of the per-output
/// attributions, since the path integral is linear in `f`.
pub fn attribution_batch<'t>(
    model: &Network,
    params: &[Var<'t>],
    inputs: &[f64],
    weights: &[f64],
    batch: usize,
    cfg: &IgConfig,
) -> Result<Var<'t>> {
    let tape: &'t Tape = params.first().map(|p| p.tape()).ok_or(Error::Config("model has no parameters".into()))?;
    if batch > 0 && inputs.len().is_multiple_of(batch) {
        model.check_input_len(inputs.len() / batch)?;
    }
    attribution_with(tape, |x| model.forward(params, x), model.output_len(), inputs, weights, batch, cfg)
}

/// Same as [`attribution_batch`] for an arbitrary recorded function mapping
/// `[rows, T]` to `[rows, outputs]`.
pub fn attribution_with<'t, F>(
    tape: &'t Tape,
    forward: F,
    outputs: usize,
    inputs: &[f64],
    weights: &[f64],
    batch: usize,
    cfg: &IgConfig,
) -> Result<Var<'t>>
where
    F: FnOnce(Var<'t>) -> Var<'t>,
{
    if batch == 0 || !inputs.len().is_multiple_of(batch) {
        return Err(Error::Shape(alloc::format!("{} input values do not form {batch} rows", inputs.len())));
    }
    let len = inputs.len() / batch;
    if weights.len() != batch * outputs {
        return Err(Error::Shape(alloc::format!("expected {} output weights, got {}", batch * outputs, weights.len())));
    }
    cfg.validate(len)?;
    let steps = cfg.steps;

    let mut path = Vec::with_capacity(batch * steps * len);
    let mut weight_rows = Vec::with_capacity(batch * steps * outputs);
    let mut magnitude = Vec::with_capacity(batch * len);
    for b in 0..batch {
        let x = &inputs[b * len..(b + 1) * len];
        for s in 0..steps {
            let alpha = (s as f64 + 0.5) / steps as f64;
            path.extend(x.iter().enumerate().map(|(t, &v)| {
                let base = cfg.baseline_at(t);
                base + alpha * (v - base)
            }));
            weight_rows.extend_from_slice(&weights[b * outputs..(b + 1) * outputs]);
        }
        magnitude.extend(x.iter().enumerate().map(|(t, &v)| (v - cfg.baseline_at(t)).abs()));
    }

    let rows = batch * steps;
    let points = tape.variable(vec![rows, len], path);
    let out = forward(points);
    if out.shape() != [rows, outputs] {
        return Err(Error::Shape(alloc::format!("forward returned {:?}, expected [{rows}, {outputs}]", out.shape())));
    }
    let picked = (out * tape.constant(vec![rows, outputs], weight_rows)).sum();
    let grads = tape.grad(picked, &[points], GradMode::CreateGraph)?[0];
    if grads.value().iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("input gradient"));
    }
    let mean = grads.group_sum_rows(steps).scale(1.0 / steps as f64);
    Ok(mean * tape.constant(vec![batch, len], magnitude))
}

/// Attribution of one output scalar of `model` at `x`.
pub fn explain(model: &Network, x: &[f64], target: AttributionTarget, cfg: &IgConfig) -> Result<Attribution> {
    Ok(explain_batch(model, &[x.to_vec()], &[target], cfg)?.remove(0))
}

/// Attributions for several samples; evaluated in chunks on fresh tapes.
pub fn explain_batch(
    model: &Network,
    inputs: &[Vec<f64>],
    targets: &[AttributionTarget],
    cfg: &IgConfig,
) -> Result<Vec<Attribution>> {
    if inputs.len() != targets.len() {
        return Err(Error::Shape("one target per input is required".into()));
    }
    let outputs = if targets.contains(&AttributionTarget::Argmax) {
        model.predict(inputs)?
    } else {
        vec![vec![0.0; model.output_len()]; inputs.len()]
    };
    for t in targets {
        if let AttributionTarget::Output(i) = t {
            if *i >= model.output_len() {
                return Err(Error::LabelOutOfRange(*i));
            }
        }
    }
    let chunk = (256 / cfg.steps.max(1)).max(1);
    let mut result = Vec::with_capacity(inputs.len());
    for start in (0..inputs.len()).step_by(chunk) {
        let end = (start + chunk).min(inputs.len());
        let tape = Tape::new();
        let params = model.const_vars(&tape);
        let flat: Vec<f64> = inputs[start..end].iter().flat_map(|x| x.iter().copied()).collect();
        let centered = cfg.centered && model.architecture().is_classifier();
        let weights: Vec<f64> = (start..end).flat_map(|i| selector(targets[i], &outputs[i], centered)).collect();
        let e = attribution_batch(model, &params, &flat, &weights, end - start, cfg)?;
        let len = flat.len() / (end - start);
        for (row, i) in e.value().chunks(len).zip(start..end) {
            let target = match targets[i] {
                AttributionTarget::Argmax => AttributionTarget::Output(argmax(&outputs[i])),
                t => t,
            };
            result.push(Attribution { values: row.to_vec(), target });
        }
    }
    Ok(result)
}

/// Attribution of output `target` (class logit or forecast step).
pub fn integrated_gradients(model: &Network, x: &[f64], target: usize, cfg: &IgConfig) -> Result<Attribution> {
    explain(model, x, AttributionTarget::Output(target), cfg)
}

/// Mean of the per-step attributions over the whole forecast horizon.
pub fn forecast_attribution(model: &Network, x: &[f64], cfg: &IgConfig) -> Result<Attribution> {
    explain(model, x, AttributionTarget::OutputMean, cfg)
}

pub fn frequency_attribution(attr: &Attribution) -> FrequencyAttribution {
    FrequencyAttribution { spectrum: dft(&attr.values) }
}
