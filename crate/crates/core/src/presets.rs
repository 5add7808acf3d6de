//! Ready-made synthetic studies with settings that make the shortcut
//! effects visible at small scale.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::decoys::{DecoyConfig, DecoyKind};
use crate::experiment::{DataSource, ExperimentSpec, RowKind, RowSpec, WindowSpec};
use crate::losses::TaskKind;
use crate::models::{Architecture, FcnConfig, MlpConfig};
use crate::synthetic::{BumpTask, SeasonalSeries};
use crate::train::{Optimizer, TrainConfig};

pub const LAMBDA_SP: f64 = 10.0;
pub const LAMBDA_FR: f64 = 1.0;
pub const IG_STEPS: usize = 4;

pub fn seeds(n: usize) -> Vec<u64> {
    (0..n as u64).collect()
}

pub fn spatial_decoy() -> DecoyConfig {
    DecoyConfig { amplitude: 3.0, ..DecoyConfig::new(DecoyKind::ClsSpatial) }
}

pub fn frequency_decoy() -> DecoyConfig {
    DecoyConfig { amplitude: 1.5, base_frequency: 10, ..DecoyConfig::new(DecoyKind::ClsFrequency) }
}

pub fn classifier(num_classes: usize) -> Architecture {
    Architecture::Fcn(FcnConfig { channels: vec![8, 16, 8], kernels: vec![7, 5, 3], num_classes, ..Default::default() })
}

pub fn forecaster(lookback: usize, horizon: usize) -> Architecture {
    Architecture::Mlp(MlpConfig { hidden: vec![64, 64], ..MlpConfig::new(lookback, horizon) })
}

/// Adam training used by every preset study.
pub fn training(task: TaskKind) -> TrainConfig {
    let mut cfg = TrainConfig::new(task);
    (cfg.epochs, cfg.learning_rate) = match task {
        TaskKind::Classification => (40, 0.01),
        TaskKind::Forecasting => (30, 0.001),
    };
    cfg.optimizer = Optimizer::adam();
    cfg.ig.steps = IG_STEPS;
    cfg
}

/// Penalty weight for feedback on a `fraction` of the training samples:
/// `lambda / fraction`, so the expected penalty per batch matches full
/// coverage. Unchanged at zero coverage.
pub fn coverage_lambda(lambda: f64, fraction: f64) -> f64 {
    if fraction > 0.0 {
        lambda / fraction
    } else {
        lambda
    }
}

fn riot(label: &str, lambda_sp: f64, lambda_fr: f64) -> RowSpec {
    RowSpec::new(label, RowKind::Riot { lambda_sp, lambda_fr, fraction: 1.0, noise: 0.0 })
}

/// Standard rows for a shortcut study with the given revised variants.
pub fn rows(revised: &[(&str, f64, f64)]) -> Vec<RowSpec> {
    let mut rows = vec![RowSpec::new("no_shortcut", RowKind::NoShortcut), RowSpec::new("base", RowKind::Base)];
    rows.extend(revised.iter().map(|&(l, a, b)| riot(l, a, b)));
    rows
}

/// Bump classification with a spatial decoy, a frequency decoy or both.
pub fn classification(decoys: &[DecoyKind], n_seeds: usize) -> ExperimentSpec {
    let decoys: Vec<DecoyConfig> = decoys
        .iter()
        .map(|k| match k {
            DecoyKind::ClsSpatial => spatial_decoy(),
            _ => frequency_decoy(),
        })
        .collect();
    let has = |k: DecoyKind| decoys.iter().any(|d| d.kind == k);
    let mut revised = Vec::new();
    if has(DecoyKind::ClsSpatial) {
        revised.push(("riot_sp", LAMBDA_SP, 0.0));
    }
    if has(DecoyKind::ClsFrequency) {
        revised.push(("riot_freq", 0.0, LAMBDA_FR));
    }
    if revised.len() == 2 {
        revised.push(("riot_freq_sp", LAMBDA_SP, LAMBDA_FR));
    }
    ExperimentSpec {
        name: name(&decoys),
        data: DataSource::Bump(BumpTask::default()),
        decoys,
        model: classifier(2),
        train: training(TaskKind::Classification),
        rows: rows(&revised),
        seeds: seeds(n_seeds),
        windows: None,
    }
}

pub const LOOKBACK: usize = 32;
pub const HORIZON: usize = 8;

/// Seasonal forecasting with a back-copy or a Dirac decoy.
pub fn forecasting(decoy: DecoyKind, n_seeds: usize) -> ExperimentSpec {
    // overlapping back-copy windows would carry each other's copies
    // outside their masks, hence the half-lookback stride there
    let (cfg, revised, stride) = match decoy {
        DecoyKind::FcBackcopy => (DecoyConfig::new(DecoyKind::FcBackcopy), ("riot_sp", LAMBDA_SP, 0.0), None),
        _ => (DecoyConfig { spacing: 5, amplitude: 2.0, ..DecoyConfig::new(DecoyKind::FcDirac) }, ("riot_freq", 0.0, 0.3), Some(3)),
    };
    let decoys = vec![cfg];
    ExperimentSpec {
        name: name(&decoys),
        data: DataSource::Seasonal(SeasonalSeries::default()),
        decoys,
        model: forecaster(LOOKBACK, HORIZON),
        train: training(TaskKind::Forecasting),
        rows: rows(&[revised]),
        seeds: seeds(n_seeds),
        windows: Some(WindowSpec { lookback: LOOKBACK, horizon: HORIZON, stride }),
    }
}

fn name(decoys: &[DecoyConfig]) -> String {
    let parts: Vec<&str> = decoys.iter().map(|d| d.kind.name()).collect();
    parts.join("+")
}
