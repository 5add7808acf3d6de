//! Shortcut injectors. Each one changes only training data and returns the
//! feedback masks that mark exactly what it changed.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::dft;
use crate::data::{windows_from, ClassificationDataset, DatasetHeader, ForecastSeries, ForecastWindows, SplitTag};
use crate::error::{Error, Result};
use crate::feedback::{FeedbackSet, FrequencyMask, TimeMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoyKind {
    /// Class-indexed sine segment replacing part of the series.
    ClsSpatial,
    /// Class-indexed pure tone added to the whole series.
    ClsFrequency,
    /// Forecast horizon copied into the start of the lookback.
    FcBackcopy,
    /// Recurring impulses with a fixed spacing.
    FcDirac,
}

impl DecoyKind {
    pub fn name(self) -> &'static str {
        match self {
            DecoyKind::ClsSpatial => "cls_spatial",
            DecoyKind::ClsFrequency => "cls_frequency",
            DecoyKind::FcBackcopy => "fc_backcopy",
            DecoyKind::FcDirac => "fc_dirac",
        }
    }
}

impl core::str::FromStr for DecoyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [DecoyKind::ClsSpatial, DecoyKind::ClsFrequency, DecoyKind::FcBackcopy, DecoyKind::FcDirac]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(alloc::format!("unknown decoy kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoyConfig {
    pub kind: DecoyKind,
    /// Amplitude `A`.
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    /// Segment length `m` of the spatial sine.
    #[serde(default = "default_segment")]
    pub segment_len: usize,
    /// Start of the spatial segment.
    #[serde(default)]
    pub offset: usize,
    /// Tone bin of class 0; class `j` uses `base_frequency + j`.
    #[serde(default = "default_base_frequency")]
    pub base_frequency: usize,
    /// Impulse spacing `k`.
    #[serde(default = "default_spacing")]
    pub spacing: usize,
    /// Window stride for the back-copy; half the lookback when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_stride: Option<usize>,
}

fn default_amplitude() -> f64 {
    1.0
}
fn default_segment() -> usize {
    16
}
fn default_base_frequency() -> usize {
    3
}
fn default_spacing() -> usize {
    4
}

impl DecoyConfig {
    pub fn new(kind: DecoyKind) -> Self {
        Self {
            kind,
            amplitude: default_amplitude(),
            segment_len: default_segment(),
            offset: 0,
            base_frequency: default_base_frequency(),
            spacing: default_spacing(),
            window_stride: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(Error::Config(alloc::format!("decoy amplitude must be finite and nonnegative, got {}", self.amplitude)));
        }
        if self.segment_len == 0 || self.spacing == 0 || self.window_stride == Some(0) {
            return Err(Error::Config("segment length, spacing and stride must be positive".into()));
        }
        Ok(())
    }
}

/// Provenance entry stored in the dataset header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoyRecord {
    pub kind: DecoyKind,
    pub config: DecoyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn record(header: &mut DatasetHeader, cfg: &DecoyConfig) -> Result<()> {
    cfg.validate()?;
    if header.decoys.iter().any(|d| d.kind == cfg.kind) {
        return Err(Error::AlreadyDecoyed(cfg.kind.name().to_string()));
    }
    header.decoys.push(DecoyRecord { kind: cfg.kind, config: cfg.clone(), seed: None });
    Ok(())
}

/// `A·sin(2π·(2+j)·n/m)` for `n = 0..m`.
pub fn spatial_pattern(class: usize, len: usize, amplitude: f64) -> Vec<f64> {
    (0..len).map(|n| amplitude * libm::sin(2.0 * PI * (2 + class) as f64 * n as f64 / len as f64)).collect()
}

/// `A·sin(2π·f·n/T)` for `n = 0..T`.
pub fn tone(bin: usize, len: usize, amplitude: f64) -> Vec<f64> {
    (0..len).map(|n| amplitude * libm::sin(2.0 * PI * ((bin * n) % len) as f64 / len as f64)).collect()
}

/// Replaces `[offset, offset+m)` of every training sample with its class
/// pattern. Masks are all-zero for validation and test samples.
pub fn inject_cls_spatial(dataset: &ClassificationDataset, cfg: &DecoyConfig) -> Result<(ClassificationDataset, FeedbackSet<TimeMask>)> {
    let len = dataset.series_len();
    let (start, end) = (cfg.offset, cfg.offset + cfg.segment_len);
    if end > len {
        return Err(Error::InvalidInterval { start, end, len });
    }
    let mut out = dataset.clone();
    record(&mut out.header, cfg)?;
    let patterns: Vec<Vec<f64>> = (0..dataset.num_classes()).map(|j| spatial_pattern(j, cfg.segment_len, cfg.amplitude)).collect();
    let mut masks = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        if dataset.tag(i) == SplitTag::Train {
            out.series[i][start..end].copy_from_slice(&patterns[dataset.labels[i]]);
            masks.push(TimeMask::from_intervals(i, &[(start, end)], len)?);
        } else {
            masks.push(TimeMask::empty(i, len));
        }
    }
    Ok((out, FeedbackSet::new(masks)))
}

/// Adds the class tone at bin `base + j` to every training sample; masks
/// mark bins `f_j` and `T − f_j` in both parts of the spectrum.
pub fn inject_cls_frequency(dataset: &ClassificationDataset, cfg: &DecoyConfig) -> Result<(ClassificationDataset, FeedbackSet<FrequencyMask>)> {
    let len = dataset.series_len();
    let classes = dataset.num_classes();
    let top = cfg.base_frequency + classes - 1;
    if cfg.base_frequency == 0 || 2 * top >= len {
        return Err(Error::Config(alloc::format!("tone bins {}..={top} must lie strictly between 0 and T/2 = {}", cfg.base_frequency, len / 2)));
    }
    let mut out = dataset.clone();
    record(&mut out.header, cfg)?;
    let tones: Vec<Vec<f64>> = (0..classes).map(|j| tone(cfg.base_frequency + j, len, cfg.amplitude)).collect();
    let mut masks = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        if dataset.tag(i) == SplitTag::Train {
            let j = dataset.labels[i];
            out.series[i].iter_mut().zip(&tones[j]).for_each(|(x, s)| *x += s);
            let f = cfg.base_frequency + j;
            masks.push(FrequencyMask::joint(i, len, &[f, len - f])?);
        } else {
            masks.push(FrequencyMask::empty(i, len));
        }
    }
    Ok((out, FeedbackSet::new(masks)))
}

/// Result of the back-copy decoy on one series.
#[derive(Debug, Clone, PartialEq)]
pub struct BackCopy {
    pub modified: Vec<f64>,
    /// Lookbacks from the modified series, horizons from the original.
    pub windows: ForecastWindows,
    pub masks: FeedbackSet<TimeMask>,
    /// Window starts whose first `W` lookback entries were overwritten.
    pub overwritten: Vec<usize>,
}

/// At every second window start `p`, overwrites `[p, p+W)` with the
/// horizon `[p+T, p+T+W)` of that window. Windows in between see part of a
/// copied block but get no feedback.
pub fn inject_fc_backcopy(series: &[f64], lookback: usize, horizon: usize, stride: usize) -> Result<BackCopy> {
    let mut modified = series.to_vec();
    let all = windows_from(series, series, lookback, horizon, stride)?;
    if all.len() < 2 {
        return Err(Error::SeriesTooShort { len: series.len(), needed: lookback + horizon + stride });
    }
    let overwritten: Vec<usize> = all.starts.iter().copied().step_by(2).filter(|p| p + lookback + horizon <= series.len()).collect();
    for &p in &overwritten {
        let source = p + lookback;
        modified[p..p + horizon].copy_from_slice(&series[source..source + horizon]);
    }
    let windows = windows_from(&modified, series, lookback, horizon, stride)?;
    let masks = windows
        .starts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if overwritten.contains(p) {
                TimeMask::from_intervals(i, &[(0, horizon)], lookback)
            } else {
                Ok(TimeMask::empty(i, lookback))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BackCopy { modified, windows, masks: FeedbackSet::new(masks), overwritten })
}

/// Indices `n·k` for `n ≥ 1` below `len`.
pub fn dirac_positions(len: usize, spacing: usize) -> Vec<usize> {
    (1..).map(|n| n * spacing).take_while(|&i| i < len).collect()
}

/// Bins carrying the spectrum of a spacing-`k` impulse train seen through
/// a window of length `T`: the multiples of `T/k` when `k` divides `T`,
/// otherwise the bins within half of the strongest one.
pub fn dirac_bins(lookback: usize, spacing: usize) -> Vec<usize> {
    if lookback.is_multiple_of(spacing) {
        let step = lookback / spacing;
        return (0..lookback).step_by(step).collect();
    }
    let mut train = vec![0.0; lookback];
    for i in (0..lookback).step_by(spacing) {
        train[i] = 1.0;
    }
    let mags = dft(&train).magnitudes();
    let max = mags.iter().cloned().fold(0.0, f64::max);
    (0..lookback).filter(|&k| mags[k] >= 0.5 * max).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dirac {
    pub modified: Vec<f64>,
    pub positions: Vec<usize>,
    /// Lookback-length mask shared by every window.
    pub mask: FrequencyMask,
}

/// Adds `A` at every `n·k` (`n ≥ 1`) of the series.
pub fn inject_fc_dirac(series: &[f64], spacing: usize, amplitude: f64, lookback: usize) -> Result<Dirac> {
    if spacing == 0 {
        return Err(Error::Config("impulse spacing must be at least 1".into()));
    }
    let positions = dirac_positions(series.len(), spacing);
    let mut modified = series.to_vec();
    for &i in &positions {
        modified[i] += amplitude;
    }
    let bins = dirac_bins(lookback, spacing);
    Ok(Dirac { modified, positions, mask: FrequencyMask::joint(0, lookback, &bins)? })
}

/// Forecasting data with a decoy on the training segment.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoyedForecast {
    pub series: ForecastSeries,
    pub train: ForecastWindows,
    /// Training segment the lookbacks are read from; differs from the
    /// stored series where the back-copy overwrote it.
    pub train_inputs: Vec<f64>,
    pub time_feedback: Option<FeedbackSet<TimeMask>>,
    pub frequency_feedback: Option<FeedbackSet<FrequencyMask>>,
}

/// Training windows of `series` with the configured forecasting decoys;
/// validation and test segments stay clean. Back-copy runs after the
/// impulses, so its masks refer to the final training windows.
pub fn decoy_forecast(series: &ForecastSeries, decoys: &[DecoyConfig], stride: usize) -> Result<DecoyedForecast> {
    let (lookback, horizon) = (series.lookback(), series.horizon());
    let mut out = series.clone();
    let mut dirac_mask = None;
    for cfg in decoys.iter().filter(|c| c.kind == DecoyKind::FcDirac) {
        record(&mut out.header, cfg)?;
        let d = inject_fc_dirac(out.segment(SplitTag::Train), cfg.spacing, cfg.amplitude, lookback)?;
        out.segment_mut(SplitTag::Train).copy_from_slice(&d.modified);
        dirac_mask = Some(d.mask);
    }
    let mut train = out.windows(SplitTag::Train, stride)?;
    let mut time_feedback = None;
    let mut train_inputs = out.segment(SplitTag::Train).to_vec();
    for cfg in decoys.iter() {
        match cfg.kind {
            DecoyKind::FcBackcopy => {
                record(&mut out.header, cfg)?;
                let stride = cfg.window_stride.unwrap_or(stride);
                let b = inject_fc_backcopy(out.segment(SplitTag::Train), lookback, horizon, stride)?;
                train = b.windows;
                train_inputs = b.modified;
                time_feedback = Some(b.masks);
            }
            DecoyKind::FcDirac => {}
            other => return Err(Error::Config(alloc::format!("{} is not a forecasting decoy", other.name()))),
        }
    }
    // the back-copy changes the lookbacks only, so the stored series keeps
    // the impulses but not the copies
    let frequency_feedback = dirac_mask.map(|m| {
        FeedbackSet::new((0..train.len()).map(|i| FrequencyMask { sample_id: i, ..m.clone() }).collect())
    });
    Ok(DecoyedForecast { series: out, train, train_inputs, time_feedback, frequency_feedback })
}
