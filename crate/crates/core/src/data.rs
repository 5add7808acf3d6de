//! Datasets, splits, standardization and forecasting windows.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoys::DecoyRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
    /// Set when the training values are constant; everything maps to 0.
    #[serde(default)]
    pub degenerate: bool,
}

impl Standardization {
    /// Population statistics of `values`.
    pub fn fit<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> Result<Self> {
        let n = values.clone().count();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let mean = values.clone().sum::<f64>() / n as f64;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let std = libm::sqrt(var);
        let degenerate = !(std > 1e-12 * mean.abs().max(1.0));
        Ok(Self { mean, std, degenerate })
    }

    pub fn apply(&self, value: f64) -> f64 {
        if self.degenerate {
            0.0
        } else {
            (value - self.mean) / self.std
        }
    }

    pub fn invert(&self, value: f64) -> f64 {
        if self.degenerate {
            self.mean
        } else {
            value * self.std + self.mean
        }
    }
}

/// Metadata carried alongside every dataset and written as its header file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub name: String,
    /// Series length for classification, lookback for forecasting.
    #[serde(rename = "T")]
    pub len: usize,
    #[serde(rename = "W", default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    /// Original label values, indexed by internal class id.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub label_names: Vec<String>,
    #[serde(default)]
    pub decoys: Vec<DecoyRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<Standardization>,
}

impl DatasetHeader {
    pub fn new(name: impl Into<String>, len: usize) -> Self {
        Self {
            name: name.into(),
            len,
            horizon: None,
            num_classes: None,
            label_names: Vec::new(),
            decoys: Vec::new(),
            standardization: None,
        }
    }
}

/// Sizes `(train, val, test)`: test is 30% and validation 20% of the rest,
/// both rounded half up, with validation rounded up so that `D = 10`
/// still yields a two-sample validation split.
pub fn split_counts(total: usize) -> (usize, usize, usize) {
    let test = (3 * total + 5) / 10;
    let val = (2 * (total - test)).div_ceil(10);
    (total - test - val, val, test)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Univariate labelled series of equal length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationDataset {
    pub header: DatasetHeader,
    pub series: Vec<Vec<f64>>,
    /// Class ids in `0..K`.
    pub labels: Vec<usize>,
    /// One tag per sample once split; empty means unsplit.
    #[serde(default)]
    pub tags: Vec<SplitTag>,
}

impl ClassificationDataset {
    pub fn new(name: impl Into<String>, series: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if series.len() != labels.len() {
            return Err(Error::Shape(alloc::format!("{} series for {} labels", series.len(), labels.len())));
        }
        let len = series[0].len();
        if let Some(bad) = series.iter().find(|s| s.len() != len) {
            return Err(Error::Shape(alloc::format!("unequal length: {} vs {len}", bad.len())));
        }
        let classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
        let mut header = DatasetHeader::new(name, len);
        header.num_classes = Some(classes);
        header.label_names = (0..classes).map(|k| k.to_string()).collect();
        Ok(Self { header, series, labels, tags: Vec::new() })
    }

    /// Builds a dataset from raw label strings; labels map to the positions
    /// of their values in sorted order (numeric order when all are numbers).
    pub fn from_raw_labels(name: impl Into<String>, series: Vec<Vec<f64>>, raw: &[String]) -> Result<Self> {
        let mut names: Vec<String> = raw.to_vec();
        let numeric: Option<Vec<f64>> = names.iter().map(|s| s.trim().parse::<f64>().ok()).collect();
        if numeric.is_some() {
            names.sort_by(|a, b| a.trim().parse::<f64>().unwrap().total_cmp(&b.trim().parse::<f64>().unwrap()));
        } else {
            names.sort();
        }
        names.dedup();
        let labels = raw.iter().map(|r| names.iter().position(|n| n == r).unwrap()).collect();
        let mut ds = Self::new(name, series, labels)?;
        let k = names.len().max(2);
        names.resize(k, String::new());
        ds.header.num_classes = Some(k);
        ds.header.label_names = names;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn series_len(&self) -> usize {
        self.header.len
    }

    pub fn num_classes(&self) -> usize {
        self.header.num_classes.unwrap_or(2)
    }

    pub fn tag(&self, i: usize) -> SplitTag {
        self.tags.get(i).copied().unwrap_or(SplitTag::Train)
    }

    /// Indices carrying `tag`; an unsplit dataset is all training data.
    pub fn indices(&self, tag: SplitTag) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.tag(i) == tag).collect()
    }

    pub fn select(&self, indices: &[usize]) -> (Vec<Vec<f64>>, Vec<usize>) {
        (indices.iter().map(|&i| self.series[i].clone()).collect(), indices.iter().map(|&i| self.labels[i]).collect())
    }
}

/// Seeded random partition into train, validation and test.
pub fn split(dataset: &mut ClassificationDataset, seed: u64) -> Result<Splits> {
    let total = dataset.len();
    if total < 10 {
        return Err(Error::Config(alloc::format!("splitting needs at least 10 samples, got {total}")));
    }
    let (train, val, _) = split_counts(total);
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut splits = Splits {
        train: order[..train].to_vec(),
        val: order[train..train + val].to_vec(),
        test: order[train + val..].to_vec(),
    };
    splits.train.sort_unstable();
    splits.val.sort_unstable();
    splits.test.sort_unstable();
    dataset.tags = vec![SplitTag::Train; total];
    for &i in &splits.val {
        dataset.tags[i] = SplitTag::Val;
    }
    for &i in &splits.test {
        dataset.tags[i] = SplitTag::Test;
    }
    Ok(splits)
}

/// Standardizes every sample with statistics of the training split only.
pub fn standardize(dataset: &mut ClassificationDataset) -> Result<Standardization> {
    let train = dataset.indices(SplitTag::Train);
    let stats = Standardization::fit(train.iter().flat_map(|&i| dataset.series[i].iter()).collect::<Vec<_>>().into_iter())?;
    for s in &mut dataset.series {
        s.iter_mut().for_each(|v| *v = stats.apply(*v));
    }
    dataset.header.standardization = Some(stats);
    Ok(stats)
}

/// A single long series split into contiguous train, validation and test
/// segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSeries {
    pub header: DatasetHeader,
    pub values: Vec<f64>,
    /// End of the training segment.
    pub train_end: usize,
    /// End of the validation segment; the test segment follows.
    pub val_end: usize,
}

impl ForecastSeries {
    /// Temporal split with the classification ratios.
    pub fn new(name: impl Into<String>, values: Vec<f64>, lookback: usize, horizon: usize) -> Result<Self> {
        let needed = lookback + horizon;
        let fits = |n: usize| {
            let (train, val, test) = split_counts(n);
            train.min(val).min(test) >= needed
        };
        if !fits(values.len()) {
            let min = (values.len()..).find(|&n| fits(n)).unwrap_or(usize::MAX);
            return Err(Error::SeriesTooShort { len: values.len(), needed: min });
        }
        let (train, val, _) = split_counts(values.len());
        let mut header = DatasetHeader::new(name, lookback);
        header.horizon = Some(horizon);
        Ok(Self { header, values, train_end: train, val_end: train + val })
    }

    pub fn lookback(&self) -> usize {
        self.header.len
    }

    pub fn horizon(&self) -> usize {
        self.header.horizon.unwrap_or(1)
    }

    pub fn segment(&self, tag: SplitTag) -> &[f64] {
        match tag {
            SplitTag::Train => &self.values[..self.train_end],
            SplitTag::Val => &self.values[self.train_end..self.val_end],
            SplitTag::Test => &self.values[self.val_end..],
        }
    }

    pub fn segment_mut(&mut self, tag: SplitTag) -> &mut [f64] {
        match tag {
            SplitTag::Train => &mut self.values[..self.train_end],
            SplitTag::Val => &mut self.values[self.train_end..self.val_end],
            SplitTag::Test => &mut self.values[self.val_end..],
        }
    }

    /// Standardizes with statistics of the training segment.
    pub fn standardize(&mut self) -> Result<Standardization> {
        let stats = Standardization::fit(self.segment(SplitTag::Train).iter())?;
        self.values.iter_mut().for_each(|v| *v = stats.apply(*v));
        self.header.standardization = Some(stats);
        Ok(stats)
    }

    pub fn windows(&self, tag: SplitTag, stride: usize) -> Result<ForecastWindows> {
        make_windows(self.segment(tag), self.lookback(), self.horizon(), stride)
    }
}

/// Lookback/horizon pairs cut from a series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastWindows {
    pub lookback: usize,
    pub horizon: usize,
    pub stride: usize,
    pub starts: Vec<usize>,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl ForecastWindows {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn flat_targets(&self) -> Vec<f64> {
        self.targets.iter().flat_map(|t| t.iter().copied()).collect()
    }
}

/// Window starts `0, stride, 2·stride, …` with `start + T + W ≤ len`.
pub fn window_starts(len: usize, lookback: usize, horizon: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 || lookback == 0 || horizon == 0 {
        return Err(Error::Config("lookback, horizon and stride must be positive".into()));
    }
    let needed = lookback + horizon;
    if len < needed {
        return Err(Error::SeriesTooShort { len, needed });
    }
    Ok((0..=len - needed).step_by(stride).collect())
}

/// Default stride: half the lookback, at least one.
pub fn default_stride(lookback: usize) -> usize {
    (lookback / 2).max(1)
}

pub fn make_windows(series: &[f64], lookback: usize, horizon: usize, stride: usize) -> Result<ForecastWindows> {
    windows_from(series, series, lookback, horizon, stride)
}

/// Windows whose lookbacks come from `inputs` and horizons from `targets`.
pub fn windows_from(inputs: &[f64], targets: &[f64], lookback: usize, horizon: usize, stride: usize) -> Result<ForecastWindows> {
    if inputs.len() != targets.len() {
        return Err(Error::Shape("input and target series differ in length".into()));
    }
    let starts = window_starts(inputs.len(), lookback, horizon, stride)?;
    Ok(ForecastWindows {
        lookback,
        horizon,
        stride,
        inputs: starts.iter().map(|&p| inputs[p..p + lookback].to_vec()).collect(),
        targets: starts.iter().map(|&p| targets[p + lookback..p + lookback + horizon].to_vec()).collect(),
        starts,
    })
}
