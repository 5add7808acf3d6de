//! Revision of a trained model with feedback masks on the training split.

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use tsxil_core::attribution::IgConfig;
use tsxil_core::data::SplitTag;
use tsxil_core::experiment::mask_mass;
use tsxil_core::feedback::Feedback;
use tsxil_core::losses::TaskKind;
use tsxil_core::models::Network;
use tsxil_core::presets;
use tsxil_core::train::{evaluate, train_with, EpochLog, Samples, TrainConfig};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Starting point of a revision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevisionInit {
    /// The base architecture, freshly initialized from the training seed.
    #[default]
    Fresh,
    /// The base weights. The penalties can then be met by shrinking the
    /// logit scale instead of moving attribution off the masks.
    Base,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviseRequest {
    pub model: String,
    /// Defaults to the dataset the model was trained on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    /// Id of a submitted mask file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<String>,
    /// Defaults to [`revision_config`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_sp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_fr: Option<f64>,
    #[serde(default)]
    pub init: RevisionInit,
}

impl ReviseRequest {
    pub fn config(&self, task: TaskKind) -> TrainConfig {
        let mut cfg = self.train.clone().unwrap_or_else(|| revision_config(task));
        if let Some(l) = self.lambda_sp {
            cfg.loss.lambda_sp = l;
        }
        if let Some(l) = self.lambda_fr {
            cfg.loss.lambda_fr = l;
        }
        cfg
    }
}

/// Defaults: the preset training with both penalties on.
pub fn revision_config(task: TaskKind) -> TrainConfig {
    let mut cfg = presets::training(task);
    cfg.loss.lambda_sp = presets::LAMBDA_SP;
    cfg.loss.lambda_fr = presets::LAMBDA_FR;
    cfg
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RevisionMetrics {
    /// Metric on the (decoyed) training split.
    pub train: f64,
    /// Metric on the clean test split.
    pub test: f64,
    /// Mean share of attribution mass inside the masks over the annotated
    /// training samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_mass: Option<f64>,
}

pub fn revision_metrics(model: &Network, train: &Samples, feedback: &Feedback, test: &Samples, ig: &IgConfig) -> Result<RevisionMetrics> {
    Ok(RevisionMetrics {
        train: evaluate(model, train)?.value(),
        test: if test.is_empty() { f64::NAN } else { evaluate(model, test)?.value() },
        mask_mass: mask_mass(model, train, feedback, ig)?,
    })
}

#[derive(Debug, Clone)]
pub struct Revision {
    pub model: Network,
    pub before: RevisionMetrics,
    pub after: RevisionMetrics,
    pub log: Vec<EpochLog>,
    /// No feedback reached the loss, so the base model was returned as is.
    pub noop: bool,
}

/// Trains on the training split of `dataset` with `feedback`, starting
/// from `init`. Without any penalty weight or any nonempty mask there is
/// nothing to revise and `base` is returned unchanged.
pub fn revise(
    base: &Network,
    init: RevisionInit,
    dataset: &Dataset,
    feedback: &Feedback,
    cfg: &TrainConfig,
    measure: &IgConfig,
    on_epoch: &mut dyn FnMut(&EpochLog) -> ControlFlow<()>,
) -> Result<Revision> {
    if cfg.loss.task != dataset.task() {
        return Err(Error::Invalid("training task does not match the dataset".into()));
    }
    base.check_input_len(dataset.input_len())?;
    let (train, feedback) = dataset.training_set(feedback)?;
    let test = dataset.split_samples(SplitTag::Test);
    let before = revision_metrics(base, &train, &feedback, &test, measure)?;
    let annotated = feedback.time.as_ref().is_some_and(|s| s.has_feedback()) && cfg.loss.lambda_sp != 0.0
        || feedback.frequency.as_ref().is_some_and(|s| s.has_feedback()) && cfg.loss.lambda_fr != 0.0;
    if !annotated {
        return Ok(Revision { model: base.clone(), before, after: before, log: Vec::new(), noop: true });
    }
    let start = match init {
        RevisionInit::Fresh => Network::new(base.architecture().clone(), cfg.seed)?,
        RevisionInit::Base => base.clone(),
    };
    let outcome = train_with(&start, &train, &feedback, None, cfg, on_epoch)?;
    let after = revision_metrics(&outcome.model, &train, &feedback, &test, measure)?;
    Ok(Revision { model: outcome.model, before, after, log: outcome.log, noop: false })
}
