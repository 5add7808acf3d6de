//! Experiment runner: the row layout of a shortcut study (no shortcut,
//! base, revised variants, early stopping) repeated over seeds.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::attribution::{explain_batch, frequency_attribution, AttributionTarget, IgConfig};
use crate::data::{default_stride, split, standardize, ClassificationDataset, ForecastSeries, SplitTag};
use crate::decoys::{decoy_forecast, inject_cls_frequency, inject_cls_spatial, DecoyConfig, DecoyKind};
use crate::error::{Error, Result};
use crate::feedback::{Feedback, FeedbackSet, Mask};
use crate::losses::TaskKind;
use crate::models::{Architecture, Network};
use crate::synthetic::{BumpTask, SeasonalSeries};
use crate::train::{evaluate, train, train_early_stopping, SampleTargets, Samples, TrainConfig, TrainOutcome};

/// Where the data of each run comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Generated afresh for every seed.
    Bump(BumpTask),
    Seasonal(SeasonalSeries),
    /// A fixed labelled dataset, re-split for every seed.
    Classification { dataset: ClassificationDataset },
    /// A fixed series, split temporally.
    Series { values: Vec<f64> },
}

impl DataSource {
    pub fn task(&self) -> TaskKind {
        match self {
            DataSource::Bump(_) | DataSource::Classification { .. } => TaskKind::Classification,
            DataSource::Seasonal(_) | DataSource::Series { .. } => TaskKind::Forecasting,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RowKind {
    /// Plain training on clean data.
    NoShortcut,
    /// Plain training on decoyed data.
    Base,
    /// Training on decoyed data with right-reason feedback.
    Riot {
        #[serde(default)]
        lambda_sp: f64,
        #[serde(default)]
        lambda_fr: f64,
        /// Share of training samples that keep their feedback.
        #[serde(default = "one")]
        fraction: f64,
        /// Share of feedback masks moved off the shortcut.
        #[serde(default)]
        noise: f64,
    },
    /// Plain training on decoyed data, stopped on clean validation data.
    EarlyStopping { patience: usize },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSpec {
    pub label: String,
    #[serde(flatten)]
    pub kind: RowKind,
}

impl RowSpec {
    pub fn new(label: impl Into<String>, kind: RowKind) -> Self {
        Self { label: label.into(), kind }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub data: DataSource,
    #[serde(default)]
    pub decoys: Vec<DecoyConfig>,
    pub model: Architecture,
    /// Shared training settings; rows override the lambda weights.
    pub train: TrainConfig,
    pub rows: Vec<RowSpec>,
    pub seeds: Vec<u64>,
    /// Forecast lookback, horizon and window stride.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub windows: Option<WindowSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub lookback: usize,
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() || self.rows.is_empty() {
            return Err(Error::Config("an experiment needs at least one seed and one row".into()));
        }
        if self.data.task() != self.train.loss.task {
            return Err(Error::Config("training task does not match the data source".into()));
        }
        if self.data.task() == TaskKind::Forecasting && self.windows.is_none() {
            return Err(Error::Config("forecasting experiments need a window spec".into()));
        }
        self.train.validate()
    }
}

/// Everything one seed's rows train and evaluate on.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub seed: u64,
    pub clean_train: Samples,
    pub train: Samples,
    pub feedback: Feedback,
    pub val: Samples,
    pub test: Samples,
}

impl Prepared {
    /// Feedback for a revised row after coverage and noise transforms.
    pub fn feedback_for(&self, fraction: f64, noise: f64) -> Result<Feedback> {
        let seed = self.seed;
        let time = self.feedback.time.as_ref().map(|f| f.subset(fraction, seed)?.noisy(noise, seed ^ 0x9e37)).transpose()?;
        let frequency =
            self.feedback.frequency.as_ref().map(|f| f.subset(fraction, seed)?.noisy(noise, seed ^ 0x9e37)).transpose()?;
        Ok(Feedback { time, frequency })
    }
}

fn restrict<M: Mask + Clone>(set: &FeedbackSet<M>, indices: &[usize]) -> FeedbackSet<M> {
    FeedbackSet::new(indices.iter().map(|&i| set.masks[i].clone()).collect())
}

/// Builds the data of one seed: split, standardize, inject decoys into the
/// training part and collect the matching masks.
pub fn prepare(spec: &ExperimentSpec, seed: u64) -> Result<Prepared> {
    match &spec.data {
        DataSource::Bump(_) | DataSource::Classification { .. } => {
            let mut clean = match &spec.data {
                DataSource::Bump(task) => task.generate(seed)?,
                DataSource::Classification { dataset } => dataset.clone(),
                _ => unreachable!(),
            };
            split(&mut clean, seed)?;
            standardize(&mut clean)?;
            let train_idx = clean.indices(SplitTag::Train);
            let mut decoyed = clean.clone();
            let mut feedback = Feedback::none();
            for cfg in &spec.decoys {
                match cfg.kind {
                    DecoyKind::ClsSpatial => {
                        let (d, masks) = inject_cls_spatial(&decoyed, cfg)?;
                        decoyed = d;
                        feedback.time = Some(restrict(&masks, &train_idx));
                    }
                    DecoyKind::ClsFrequency => {
                        let (d, masks) = inject_cls_frequency(&decoyed, cfg)?;
                        decoyed = d;
                        feedback.frequency = Some(restrict(&masks, &train_idx));
                    }
                    other => return Err(Error::Config(alloc::format!("{} does not apply to classification", other.name()))),
                }
            }
            Ok(Prepared {
                seed,
                clean_train: Samples::from_split(&clean, SplitTag::Train),
                train: Samples::from_split(&decoyed, SplitTag::Train),
                feedback,
                val: Samples::from_split(&clean, SplitTag::Val),
                test: Samples::from_split(&clean, SplitTag::Test),
            })
        }
        DataSource::Seasonal(_) | DataSource::Series { .. } => {
            let w = spec.windows.ok_or_else(|| Error::Config("missing window spec".into()))?;
            let values = match &spec.data {
                DataSource::Seasonal(s) => s.generate(seed)?,
                DataSource::Series { values } => values.clone(),
                _ => unreachable!(),
            };
            let mut series = ForecastSeries::new(spec.name.clone(), values, w.lookback, w.horizon)?;
            series.standardize()?;
            let stride = w.stride.unwrap_or_else(|| default_stride(w.lookback));
            let decoyed = decoy_forecast(&series, &spec.decoys, stride)?;
            Ok(Prepared {
                seed,
                clean_train: Samples::from_windows(&series.windows(SplitTag::Train, stride)?),
                train: Samples::from_windows(&decoyed.train),
                feedback: Feedback { time: decoyed.time_feedback, frequency: decoyed.frequency_feedback },
                val: Samples::from_windows(&series.windows(SplitTag::Val, stride)?),
                test: Samples::from_windows(&series.windows(SplitTag::Test, stride)?),
            })
        }
    }
}

/// Trains one row on prepared data; returns the outcome with the training
/// data it was evaluated on.
pub fn run_row(spec: &ExperimentSpec, row: &RowKind, data: &Prepared) -> Result<(TrainOutcome, Metrics)> {
    let model = Network::new(spec.model.clone(), data.seed)?;
    let mut cfg = spec.train.clone();
    cfg.seed = data.seed;
    cfg.loss.lambda_sp = 0.0;
    cfg.loss.lambda_fr = 0.0;
    let (outcome, train_data) = match *row {
        RowKind::NoShortcut => (train(&model, &data.clean_train, &Feedback::none(), &cfg)?, &data.clean_train),
        RowKind::Base => (train(&model, &data.train, &Feedback::none(), &cfg)?, &data.train),
        RowKind::Riot { lambda_sp, lambda_fr, fraction, noise } => {
            cfg.loss.lambda_sp = lambda_sp;
            cfg.loss.lambda_fr = lambda_fr;
            let feedback = data.feedback_for(fraction, noise)?;
            (train(&model, &data.train, &feedback, &cfg)?, &data.train)
        }
        RowKind::EarlyStopping { patience } => {
            cfg.patience = Some(patience);
            (train_early_stopping(&model, &data.train, &data.val, &cfg)?, &data.train)
        }
    };
    let metrics = Metrics {
        train: evaluate(&outcome.model, train_data)?.value(),
        test: evaluate(&outcome.model, &data.test)?.value(),
    };
    Ok((outcome, metrics))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub train: f64,
    pub test: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self { mean: f64::NAN, std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            libm::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0))
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub train: f64,
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub label: String,
    /// Balanced accuracy or MSE, depending on the task.
    pub metric: String,
    pub train: Stat,
    pub test: Stat,
    pub runs: Vec<RunResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl MetricRow {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub rows: Vec<MetricRow>,
}

fn metric_name(task: TaskKind) -> &'static str {
    match task {
        TaskKind::Classification => "balanced_accuracy",
        TaskKind::Forecasting => "mse",
    }
}

/// Runs every row over every seed. A row whose run fails is reported with
/// its error and the remaining rows still run.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    run_experiment_with(spec, &mut |_, _, _| {})
}

/// [`run_experiment`] with a callback after every finished run.
pub fn run_experiment_with(
    spec: &ExperimentSpec,
    on_run: &mut dyn FnMut(&RowSpec, u64, &Result<(TrainOutcome, Metrics)>),
) -> Result<ExperimentReport> {
    spec.validate()?;
    let prepared: Vec<Prepared> = spec.seeds.iter().map(|&s| prepare(spec, s)).collect::<Result<_>>()?;
    let metric = metric_name(spec.data.task()).to_string();
    let mut rows = Vec::with_capacity(spec.rows.len());
    for row in &spec.rows {
        let mut runs = Vec::with_capacity(prepared.len());
        let mut error = None;
        for data in &prepared {
            let result = run_row(spec, &row.kind, data);
            on_run(row, data.seed, &result);
            match result {
                Ok((_, m)) => runs.push(RunResult { seed: data.seed, train: m.train, test: m.test }),
                Err(e) => {
                    error = Some(alloc::format!("seed {}: {e}", data.seed));
                    break;
                }
            }
        }
        let train: Vec<f64> = runs.iter().map(|r| r.train).collect();
        let test: Vec<f64> = runs.iter().map(|r| r.test).collect();
        rows.push(MetricRow { label: row.label.clone(), metric: metric.clone(), train: Stat::of(&train), test: Stat::of(&test), runs, error });
    }
    Ok(ExperimentReport { name: spec.name.clone(), rows })
}

impl ExperimentReport {
    pub fn row(&self, label: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Plain-text table, one line per row.
    pub fn to_table(&self) -> String {
        let mut out = alloc::format!("{}\n{:<24} {:>18} {:>18}\n", self.name, "row", "train", "test");
        for r in &self.rows {
            match &r.error {
                Some(e) => out.push_str(&alloc::format!("{:<24} failed: {e}\n", r.label)),
                None => out.push_str(&alloc::format!(
                    "{:<24} {:>9.4} ± {:<6.4} {:>9.4} ± {:<6.4}\n",
                    r.label, r.train.mean, r.train.std, r.test.mean, r.test.std
                )),
            }
        }
        out
    }
}

/// Mean share of attribution mass inside the feedback masks over the
/// annotated samples: `Σ|e|` for time masks, `Σ|Re| + Σ|Im|` of the
/// attribution spectrum for frequency masks. Classifiers explain the label
/// logit, forecasters the mean forecast. `None` without annotations.
pub fn mask_mass(model: &Network, data: &Samples, feedback: &Feedback, ig: &IgConfig) -> Result<Option<f64>> {
    feedback.validate(data.len(), data.inputs.first().map_or(0, Vec::len))?;
    let annotated = |i: usize| {
        feedback.time.as_ref().is_some_and(|s| !s.masks[i].is_empty())
            || feedback.frequency.as_ref().is_some_and(|s| !s.masks[i].is_empty())
    };
    let idx: Vec<usize> = (0..data.len()).filter(|&i| annotated(i)).collect();
    if idx.is_empty() {
        return Ok(None);
    }
    let inputs: Vec<Vec<f64>> = idx.iter().map(|&i| data.inputs[i].clone()).collect();
    let targets: Vec<AttributionTarget> = idx
        .iter()
        .map(|&i| match &data.targets {
            SampleTargets::Labels(y) => AttributionTarget::Output(y[i]),
            SampleTargets::Values(_) => AttributionTarget::OutputMean,
        })
        .collect();
    let attrs = explain_batch(model, &inputs, &targets, ig)?;
    let mut fractions = Vec::new();
    for (a, &i) in attrs.iter().zip(&idx) {
        if let Some(m) = feedback.time.as_ref().map(|s| &s.masks[i]).filter(|m| !m.is_empty()) {
            fractions.push(a.mass_fraction(&m.bits));
        }
        if let Some(m) = feedback.frequency.as_ref().map(|s| &s.masks[i]).filter(|m| !m.is_empty()) {
            let spec = frequency_attribution(a).spectrum;
            let total: f64 = spec.re.iter().chain(&spec.im).map(|v| v.abs()).sum();
            let inside: f64 = spec.re.iter().zip(&m.re_bits).chain(spec.im.iter().zip(&m.im_bits)).filter(|(_, b)| **b).map(|(v, _)| v.abs()).sum();
            fractions.push(if total == 0.0 { 0.0 } else { inside / total });
        }
    }
    Ok(Some(fractions.iter().sum::<f64>() / fractions.len() as f64))
}
