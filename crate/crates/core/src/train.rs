//! Training loop with the combined loss, metrics and early stopping.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::{attribution_batch, selector, AttributionTarget, IgConfig, TRAINING_STEPS};
use crate::autodiff::{Tape, Tensor};
use crate::data::{ClassificationDataset, ForecastWindows, SplitTag};
use crate::error::{Error, Result};
use crate::feedback::Feedback;
use crate::losses::{combined_loss_var, right_answer_loss, rr_frequency_var, rr_spatial_var, LossConfig, LossReport, Targets, TaskKind};
use crate::models::{argmax, Network};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Sgd { momentum: 0.9 }
    }
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Class whose attribution the right-reason terms penalize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RrTarget {
    /// Label logit for classifiers, output mean for forecasters.
    #[default]
    Label,
    Argmax,
    /// Random `±1/√W` output weights per sample and step. The expected
    /// squared attribution is the mean of the per-output squared
    /// attributions, so outputs cannot cancel each other. Classifiers fall
    /// back to the label logit.
    Projection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default)]
    pub seed: u64,
    pub loss: LossConfig,
    #[serde(default = "training_ig")]
    pub ig: IgConfig,
    #[serde(default)]
    pub rr_target: RrTarget,
    /// Rescales the gradient when its norm exceeds this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    /// Early-stopping patience on the validation metric.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
}

fn training_ig() -> IgConfig {
    IgConfig::with_steps(TRAINING_STEPS)
}

impl TrainConfig {
    pub fn new(task: TaskKind) -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.01,
            optimizer: Optimizer::default(),
            seed: 0,
            loss: LossConfig::new(task),
            ig: training_ig(),
            rr_target: match task {
                TaskKind::Classification => RrTarget::Label,
                TaskKind::Forecasting => RrTarget::Projection,
            },
            clip_norm: None,
            patience: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.patience == Some(0) {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        self.loss.validate()?;
        if self.ig.steps == 0 {
            return Err(Error::Config("integration steps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SampleTargets {
    Labels(Vec<usize>),
    Values(Vec<Vec<f64>>),
}

/// Inputs with their targets, as consumed by the training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Samples {
    pub inputs: Vec<Vec<f64>>,
    pub targets: SampleTargets,
}

impl Samples {
    pub fn classification(inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> Self {
        Self { inputs, targets: SampleTargets::Labels(labels) }
    }

    pub fn forecasting(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Self {
        Self { inputs, targets: SampleTargets::Values(targets) }
    }

    /// The samples of one split.
    pub fn from_split(dataset: &ClassificationDataset, tag: SplitTag) -> Self {
        let (inputs, labels) = dataset.select(&dataset.indices(tag));
        Self::classification(inputs, labels)
    }

    pub fn from_windows(windows: &ForecastWindows) -> Self {
        Self::forecasting(windows.inputs.clone(), windows.targets.clone())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn task(&self) -> TaskKind {
        match self.targets {
            SampleTargets::Labels(_) => TaskKind::Classification,
            SampleTargets::Values(_) => TaskKind::Forecasting,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    #[serde(flatten)]
    pub report: LossReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Network,
    pub log: Vec<EpochLog>,
    /// Epoch (1-based) whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

struct OptimizerState {
    kind: Optimizer,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: i32,
}

impl OptimizerState {
    fn new(kind: Optimizer, params: &[Tensor]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        Self { kind, first: zeros.clone(), second: zeros, step: 0 }
    }

    fn apply(&mut self, params: &mut [Tensor], grads: &[Vec<f64>], lr: f64) {
        self.step += 1;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let data = p.data_mut();
            match self.kind {
                Optimizer::Sgd { momentum } => {
                    for ((w, v), gj) in data.iter_mut().zip(&mut self.first[i]).zip(g) {
                        *v = momentum * *v + gj;
                        *w -= lr * *v;
                    }
                }
                Optimizer::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - libm::pow(beta1, self.step as f64);
                    let c2 = 1.0 - libm::pow(beta2, self.step as f64);
                    for (((w, m), s), gj) in data.iter_mut().zip(&mut self.first[i]).zip(&mut self.second[i]).zip(g) {
                        *m = beta1 * *m + (1.0 - beta1) * gj;
                        *s = beta2 * *s + (1.0 - beta2) * gj * gj;
                        *w -= lr * (*m / c1) / (libm::sqrt(*s / c2) + eps);
                    }
                }
            }
        }
    }
}

/// One optimization step's loss graph and parameter gradients.
pub fn batch_gradients(
    model: &Network,
    data: &Samples,
    feedback: &Feedback,
    batch: &[usize],
    cfg: &TrainConfig,
) -> Result<(LossReport, Vec<Vec<f64>>)> {
    let len = data.inputs[batch[0]].len();
    let outputs = model.output_len();
    let tape = Tape::new();
    let params = model.param_vars(&tape);
    let flat: Vec<f64> = batch.iter().flat_map(|&i| data.inputs[i].iter().copied()).collect();
    let pred = model.forward(&params, tape.constant(vec![batch.len(), len], flat));
    let (labels, values): (Vec<usize>, Vec<f64>);
    let ra = match &data.targets {
        SampleTargets::Labels(all) => {
            labels = batch.iter().map(|&i| all[i]).collect();
            right_answer_loss(pred, &Targets::Labels(&labels))?
        }
        SampleTargets::Values(all) => {
            values = batch.iter().flat_map(|&i| all[i].iter().copied()).collect();
            right_answer_loss(pred, &Targets::Values(&values))?
        }
    };

    let time_rows: Vec<bool> = batch
        .iter()
        .map(|&i| cfg.loss.lambda_sp > 0.0 && feedback.time.as_ref().is_some_and(|f| f.masks[i].bits.iter().any(|b| *b)))
        .collect();
    let freq_rows: Vec<bool> = batch
        .iter()
        .map(|&i| {
            cfg.loss.lambda_fr > 0.0
                && feedback.frequency.as_ref().is_some_and(|f| f.masks[i].re_bits.iter().chain(&f.masks[i].im_bits).any(|b| *b))
        })
        .collect();
    let annotated: Vec<usize> = (0..batch.len()).filter(|&r| time_rows[r] || freq_rows[r]).collect();

    let (mut rr_sp, mut rr_fr) = (None, None);
    if !annotated.is_empty() {
        let pred_values = pred.value();
        let inputs: Vec<f64> = annotated.iter().flat_map(|&r| data.inputs[batch[r]].iter().copied()).collect();
        let centered = cfg.ig.centered && model.architecture().is_classifier();
        let mut proj = ChaCha8Rng::seed_from_u64(batch.iter().fold(cfg.seed, |h, &i| h.rotate_left(7) ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)));
        let weights: Vec<f64> = annotated
            .iter()
            .flat_map(|&r| {
                let target = match (&data.targets, cfg.rr_target) {
                    (SampleTargets::Labels(_), RrTarget::Argmax) => AttributionTarget::Argmax,
                    (SampleTargets::Labels(all), _) => AttributionTarget::Output(all[batch[r]]),
                    (SampleTargets::Values(_), RrTarget::Projection) => {
                        let scale = 1.0 / libm::sqrt(outputs as f64);
                        return (0..outputs).map(|_| if proj.random::<bool>() { scale } else { -scale }).collect::<Vec<_>>();
                    }
                    (SampleTargets::Values(_), _) => AttributionTarget::OutputMean,
                };
                selector(target, &pred_values[r * outputs..(r + 1) * outputs], centered)
            })
            .collect();
        let e = attribution_batch(model, &params, &inputs, &weights, annotated.len(), &cfg.ig)?;
        let norm = if cfg.loss.normalize_by_len { 1.0 / len as f64 } else { 1.0 };
        if time_rows.iter().any(|b| *b) {
            let time = feedback.time.as_ref().expect("time rows imply time feedback");
            let mask: Vec<f64> = annotated
                .iter()
                .flat_map(|&r| {
                    let on = time_rows[r];
                    time.masks[batch[r]].bits.iter().map(move |&b| if on && b { 1.0 } else { 0.0 })
                })
                .collect();
            rr_sp = Some(rr_spatial_var(e, &mask, batch.len()).scale(norm));
        }
        if freq_rows.iter().any(|b| *b) {
            let freq = feedback.frequency.as_ref().expect("frequency rows imply frequency feedback");
            let pick = |bits: fn(&crate::feedback::FrequencyMask) -> &Vec<bool>| -> Vec<f64> {
                annotated
                    .iter()
                    .flat_map(|&r| {
                        let on = freq_rows[r];
                        bits(&freq.masks[batch[r]]).iter().map(move |&b| if on && b { 1.0 } else { 0.0 })
                    })
                    .collect()
            };
            let (re, im) = e.dft_rows();
            rr_fr = Some(rr_frequency_var(re, im, &pick(|m| &m.re_bits), &pick(|m| &m.im_bits), batch.len()).scale(norm));
        }
    }

    let total = combined_loss_var(ra, rr_sp, rr_fr, &cfg.loss);
    let report = LossReport {
        ra: ra.item(),
        rr_sp: rr_sp.map_or(0.0, |v| v.item()),
        rr_fr: rr_fr.map_or(0.0, |v| v.item()),
        total: total.item(),
    };
    let grads = tape.mixed_partial_grad(total, &params)?;
    Ok((report, grads.iter().map(|g| g.value().to_vec()).collect()))
}

/// Trains a copy of `model`; `on_epoch` may stop training early by
/// returning `ControlFlow::Break`.
pub fn train_with(
    model: &Network,
    data: &Samples,
    feedback: &Feedback,
    validation: Option<&Samples>,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.loss.task != data.task() {
        return Err(Error::Config("loss task does not match the data".into()));
    }
    let len = data.inputs[0].len();
    if data.inputs.iter().any(|x| x.len() != len) {
        return Err(Error::Shape("training inputs differ in length".into()));
    }
    model.check_input_len(len)?;
    feedback.validate(data.len(), len)?;
    if cfg.patience.is_some() && validation.is_none() {
        return Err(Error::Config("early stopping needs validation data".into()));
    }

    let mut current = model.clone();
    let mut state = OptimizerState::new(cfg.optimizer, current.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Network)> = None;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossReport::default();
        let batches = order.chunks(cfg.batch_size).count();
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (report, mut grads) = batch_gradients(&current, data, feedback, batch, cfg)?;
            if !report.total.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            if let Some(max) = cfg.clip_norm {
                let norm = libm::sqrt(grads.iter().flatten().map(|g| g * g).sum::<f64>());
                if norm > max {
                    grads.iter_mut().flatten().for_each(|g| *g *= max / norm);
                }
            }
            state.apply(current.params_mut(), &grads, cfg.learning_rate);
            sum.ra += report.ra;
            sum.rr_sp += report.rr_sp;
            sum.rr_fr += report.rr_fr;
            sum.total += report.total;
        }
        let n = batches as f64;
        let report = LossReport { ra: sum.ra / n, rr_sp: sum.rr_sp / n, rr_fr: sum.rr_fr / n, total: sum.total / n };
        let val_metric = validation.map(|v| evaluate(&current, v).map(|m| m.score())).transpose()?;
        let entry = EpochLog { epoch, report, val_metric };
        let flow = on_epoch(&entry);
        log.push(entry);

        if let (Some(patience), Some(score)) = (cfg.patience, val_metric) {
            if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
                best = Some((score, epoch, current.clone()));
            }
            let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
            if epoch - best_epoch >= patience && epoch < cfg.epochs {
                stopped_early = true;
                break;
            }
        }
        if flow.is_break() {
            stopped_early = epoch < cfg.epochs;
            break;
        }
    }

    let last = log.len();
    Ok(match best {
        Some((_, best_epoch, model)) => TrainOutcome { model, log, best_epoch, stopped_early },
        None => TrainOutcome { model: current, log, best_epoch: last, stopped_early },
    })
}

pub fn train(model: &Network, data: &Samples, feedback: &Feedback, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, data, feedback, None, cfg, &mut |_| ControlFlow::Continue(()))
}

/// Trains with the given patience and returns the parameters of the epoch
/// with the best metric on `clean_val`.
pub fn train_early_stopping(model: &Network, data: &Samples, clean_val: &Samples, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.patience.is_none() {
        return Err(Error::Config("early stopping needs a patience".into()));
    }
    train_with(model, data, &Feedback::none(), Some(clean_val), cfg, &mut |_| ControlFlow::Continue(()))
}

/// Mean of per-class recall over the classes present in `labels`.
pub fn balanced_accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    let classes = labels.iter().chain(predictions).max().map_or(0, |m| m + 1);
    balanced_accuracy_with_classes(predictions, labels, classes).0
}

/// Balanced accuracy plus the classes in `0..classes` that never occur in
/// `labels` and were therefore left out of the mean.
pub fn balanced_accuracy_with_classes(predictions: &[usize], labels: &[usize], classes: usize) -> (f64, Vec<usize>) {
    let mut hits = vec![0usize; classes];
    let mut counts = vec![0usize; classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if y < classes {
            counts[y] += 1;
            if p == y {
                hits[y] += 1;
            }
        }
    }
    let absent: Vec<usize> = (0..classes).filter(|&k| counts[k] == 0).collect();
    let present = classes - absent.len();
    if present == 0 {
        return (0.0, absent);
    }
    let total: f64 = (0..classes).filter(|&k| counts[k] > 0).map(|k| hits[k] as f64 / counts[k] as f64).sum();
    (total / present as f64, absent)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mse: f64,
    pub mae: f64,
}

pub fn regression_metrics(forecasts: &[f64], targets: &[f64]) -> Result<RegressionMetrics> {
    if forecasts.len() != targets.len() || forecasts.is_empty() {
        return Err(Error::Shape(alloc::format!("{} forecasts for {} targets", forecasts.len(), targets.len())));
    }
    let n = forecasts.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (f, y) in forecasts.iter().zip(targets) {
        se += (f - y) * (f - y);
        ae += (f - y).abs();
    }
    Ok(RegressionMetrics { mse: se / n, mae: ae / n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metric {
    BalancedAccuracy { value: f64 },
    Regression { mse: f64, mae: f64 },
}

impl Metric {
    /// Higher is better: accuracy, or negated MSE.
    pub fn score(&self) -> f64 {
        match self {
            Metric::BalancedAccuracy { value } => *value,
            Metric::Regression { mse, .. } => -mse,
        }
    }

    /// The headline number: accuracy or MSE.
    pub fn value(&self) -> f64 {
        match self {
            Metric::BalancedAccuracy { value } => *value,
            Metric::Regression { mse, .. } => *mse,
        }
    }
}

pub fn evaluate(model: &Network, data: &Samples) -> Result<Metric> {
    let outputs = model.predict(&data.inputs)?;
    Ok(match &data.targets {
        SampleTargets::Labels(labels) => {
            let predictions: Vec<usize> = outputs.iter().map(|o| argmax(o)).collect();
            let (value, _) = balanced_accuracy_with_classes(&predictions, labels, model.output_len());
            Metric::BalancedAccuracy { value }
        }
        SampleTargets::Values(targets) => {
            let flat: Vec<f64> = outputs.into_iter().flatten().collect();
            let truth: Vec<f64> = targets.iter().flatten().copied().collect();
            let m = regression_metrics(&flat, &truth)?;
            Metric::Regression { mse: m.mse, mae: m.mae }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_accuracy_examples() {
        assert_eq!(balanced_accuracy(&[0, 1, 1, 0], &[0, 1, 1, 0]), 1.0);
        assert_eq!(balanced_accuracy(&[0, 0, 0, 0], &[0, 1, 0, 1]), 0.5);
        // recalls 1.0, 0.5, 0.0
        assert_eq!(balanced_accuracy(&[0, 0, 1, 0, 0, 0], &[0, 0, 1, 1, 2, 2]), 0.5);
        let (value, absent) = balanced_accuracy_with_classes(&[0, 0], &[0, 0], 3);
        assert_eq!((value, absent), (1.0, vec![1, 2]));
    }

    #[test]
    fn regression_examples() {
        assert_eq!(regression_metrics(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), RegressionMetrics { mse: 0.0, mae: 0.0 });
        assert_eq!(regression_metrics(&[1.0, -1.0], &[0.0, 0.0]).unwrap(), RegressionMetrics { mse: 1.0, mae: 1.0 });
        assert_eq!(regression_metrics(&[3.0, 0.0, 0.0, 0.0], &[0.0; 4]).unwrap(), RegressionMetrics { mse: 2.25, mae: 0.75 });
    }
}
