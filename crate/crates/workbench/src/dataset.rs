//! Dataset directories as read and written by the CLI and the service.
//!
//! ```text
//! <dir>/data.csv      samples (label first) or a single-column series
//! <dir>/targets.csv   forecasting only: horizon source when it differs
//! <dir>/header.json   name, T, W, K, decoy provenance, standardization
//! <dir>/split.json    split tags, or the temporal split and stride
//! <dir>/masks.json    optional feedback in the mask file format
//! ```

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tsxil_core::data::{default_stride, split, standardize, windows_from, ClassificationDataset, DatasetHeader, ForecastSeries, SplitTag};
use tsxil_core::decoys::{decoy_forecast, inject_cls_frequency, inject_cls_spatial, DecoyConfig, DecoyKind};
use tsxil_core::feedback::{Feedback, FeedbackSet, Mask};
use tsxil_core::losses::TaskKind;
use tsxil_core::train::Samples;

use crate::csvio;
use crate::error::{Error, Result};
use crate::masks::MaskFile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum SplitFile {
    Classification { tags: Vec<SplitTag> },
    Forecasting { train_end: usize, val_end: usize, stride: usize },
}

/// A forecasting series cut into windows; the lookbacks come from
/// `inputs` and the horizons from `targets`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastData {
    pub header: DatasetHeader,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub train_end: usize,
    pub val_end: usize,
    pub stride: usize,
    windows: Vec<(SplitTag, Vec<f64>, Vec<f64>)>,
}

impl ForecastData {
    pub fn new(header: DatasetHeader, inputs: Vec<f64>, targets: Vec<f64>, train_end: usize, val_end: usize, stride: usize) -> Result<Self> {
        let (t, w) = (header.len, header.horizon.ok_or_else(|| Error::Invalid("forecasting header lacks W".into()))?);
        if inputs.len() != targets.len() || !(train_end <= val_end && val_end <= inputs.len()) {
            return Err(Error::Invalid("inconsistent forecasting split".into()));
        }
        let mut windows = Vec::new();
        for (tag, range) in [(SplitTag::Train, 0..train_end), (SplitTag::Val, train_end..val_end), (SplitTag::Test, val_end..inputs.len())] {
            let seg = windows_from(&inputs[range.clone()], &targets[range], t, w, stride)?;
            windows.extend(seg.inputs.into_iter().zip(seg.targets).map(|(x, y)| (tag, x, y)));
        }
        Ok(Self { header, inputs, targets, train_end, val_end, stride, windows })
    }

    /// Clean data with the default temporal split.
    pub fn from_series(series: &ForecastSeries, stride: Option<usize>) -> Result<Self> {
        let stride = stride.unwrap_or_else(|| default_stride(series.lookback()));
        Self::new(series.header.clone(), series.values.clone(), series.values.clone(), series.train_end, series.val_end, stride)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Classification(ClassificationDataset),
    Forecasting(ForecastData),
}

/// One sample as served to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleView {
    pub sample_id: usize,
    pub split: SplitTag,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<f64>>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

impl Dataset {
    /// Splits with `seed` and standardizes on the training part.
    pub fn prepare_classification(mut ds: ClassificationDataset, seed: u64) -> Result<Self> {
        split(&mut ds, seed)?;
        standardize(&mut ds)?;
        Ok(Dataset::Classification(ds))
    }

    pub fn prepare_series(name: &str, values: Vec<f64>, lookback: usize, horizon: usize, stride: Option<usize>) -> Result<Self> {
        let mut series = ForecastSeries::new(name, values, lookback, horizon)?;
        series.standardize()?;
        Ok(Dataset::Forecasting(ForecastData::from_series(&series, stride)?))
    }

    pub fn task(&self) -> TaskKind {
        match self {
            Dataset::Classification(_) => TaskKind::Classification,
            Dataset::Forecasting(_) => TaskKind::Forecasting,
        }
    }

    pub fn header(&self) -> &DatasetHeader {
        match self {
            Dataset::Classification(d) => &d.header,
            Dataset::Forecasting(f) => &f.header,
        }
    }

    /// Length of a model input.
    pub fn input_len(&self) -> usize {
        self.header().len
    }

    pub fn len(&self) -> usize {
        match self {
            Dataset::Classification(d) => d.len(),
            Dataset::Forecasting(f) => f.windows.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tag(&self, n: usize) -> SplitTag {
        match self {
            Dataset::Classification(d) => d.tag(n),
            Dataset::Forecasting(f) => f.windows[n].0,
        }
    }

    pub fn input(&self, n: usize) -> &[f64] {
        match self {
            Dataset::Classification(d) => &d.series[n],
            Dataset::Forecasting(f) => &f.windows[n].1,
        }
    }

    pub fn sample(&self, n: usize) -> Result<SampleView> {
        if n >= self.len() {
            return Err(Error::NotFound(format!("sample {n}")));
        }
        Ok(match self {
            Dataset::Classification(d) => SampleView {
                sample_id: n,
                split: d.tag(n),
                values: d.series[n].clone(),
                label: Some(d.header.label_names.get(d.labels[n]).cloned().unwrap_or_else(|| d.labels[n].to_string())),
                target: None,
            },
            Dataset::Forecasting(f) => {
                let (tag, x, y) = &f.windows[n];
                SampleView { sample_id: n, split: *tag, values: x.clone(), label: None, target: Some(y.clone()) }
            }
        })
    }

    pub fn indices(&self, tag: SplitTag) -> Vec<usize> {
        (0..self.len()).filter(|&n| self.tag(n) == tag).collect()
    }

    /// Samples of the given indices.
    pub fn samples(&self, indices: &[usize]) -> Samples {
        match self {
            Dataset::Classification(d) => {
                let (x, y) = d.select(indices);
                Samples::classification(x, y)
            }
            Dataset::Forecasting(f) => Samples::forecasting(
                indices.iter().map(|&i| f.windows[i].1.clone()).collect(),
                indices.iter().map(|&i| f.windows[i].2.clone()).collect(),
            ),
        }
    }

    pub fn split_samples(&self, tag: SplitTag) -> Samples {
        self.samples(&self.indices(tag))
    }

    /// Training samples with their feedback. Masks on validation or test
    /// samples are dropped; every returned sample is checked to be a
    /// training sample.
    pub fn training_set(&self, feedback: &Feedback) -> Result<(Samples, Feedback)> {
        let train = self.indices(SplitTag::Train);
        if let Some(n) = train.iter().find(|&&n| self.tag(n) != SplitTag::Train) {
            return Err(Error::Invalid(format!("sample {n} is not a training sample")));
        }
        fn restrict<M: Mask + Clone>(set: &FeedbackSet<M>, idx: &[usize]) -> FeedbackSet<M> {
            FeedbackSet::new(idx.iter().map(|&i| set.masks[i].clone()).collect())
        }
        let fb = Feedback {
            time: feedback.time.as_ref().map(|s| restrict(s, &train)),
            frequency: feedback.frequency.as_ref().map(|s| restrict(s, &train)),
        };
        Ok((self.samples(&train), fb))
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let header: DatasetHeader = read_json(&dir.join("header.json"))?;
        let split: SplitFile = read_json(&dir.join("split.json"))?;
        let data = dir.join("data.csv");
        match split {
            SplitFile::Classification { tags } => {
                let raw = csvio::load_classification(&data)?;
                if tags.len() != raw.len() {
                    return Err(Error::Invalid(format!("{} split tags for {} samples", tags.len(), raw.len())));
                }
                let mut ds = raw;
                // labels map through the stored names, which may list classes
                // absent from this file
                if !header.label_names.is_empty() {
                    let names = &ds.header.label_names;
                    ds.labels = ds
                        .labels
                        .iter()
                        .map(|&l| header.label_names.iter().position(|n| *n == names[l]).ok_or(tsxil_core::Error::LabelOutOfRange(l)))
                        .collect::<std::result::Result<_, _>>()?;
                }
                ds.header = header;
                ds.tags = tags;
                Ok(Dataset::Classification(ds))
            }
            SplitFile::Forecasting { train_end, val_end, stride } => {
                let inputs = csvio::load_series(&data)?;
                let targets_path = dir.join("targets.csv");
                let targets = if targets_path.exists() { csvio::load_series(&targets_path)? } else { inputs.clone() };
                Ok(Dataset::Forecasting(ForecastData::new(header, inputs, targets, train_end, val_end, stride)?))
            }
        }
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join("header.json"), self.header())?;
        match self {
            Dataset::Classification(d) => {
                csvio::write_classification(d, create(&dir.join("data.csv"))?)?;
                let tags = if d.tags.is_empty() { vec![SplitTag::Train; d.len()] } else { d.tags.clone() };
                write_json(&dir.join("split.json"), &SplitFile::Classification { tags })
            }
            Dataset::Forecasting(f) => {
                csvio::write_series(&f.inputs, create(&dir.join("data.csv"))?)?;
                if f.targets != f.inputs {
                    csvio::write_series(&f.targets, create(&dir.join("targets.csv"))?)?;
                }
                write_json(&dir.join("split.json"), &SplitFile::Forecasting { train_end: f.train_end, val_end: f.val_end, stride: f.stride })
            }
        }
    }

    /// Feedback stored next to the data, if any.
    pub fn load_masks(&self, dir: &Path) -> Result<Option<Feedback>> {
        let path = dir.join("masks.json");
        if !path.exists() {
            return Ok(None);
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Some(MaskFile::parse(&bytes)?.to_feedback(self.len(), self.input_len())?))
    }

    /// Injects one decoy into the training part. Returns the new dataset and
    /// the masks of the decoy; `seed` is recorded as provenance.
    pub fn apply_decoy(&self, cfg: &DecoyConfig, seed: Option<u64>) -> Result<(Dataset, MaskFile)> {
        let (mut out, feedback) = match (self, cfg.kind) {
            (Dataset::Classification(d), DecoyKind::ClsSpatial) => {
                let (d, masks) = inject_cls_spatial(d, cfg)?;
                (Dataset::Classification(d), Feedback::time(masks))
            }
            (Dataset::Classification(d), DecoyKind::ClsFrequency) => {
                let (d, masks) = inject_cls_frequency(d, cfg)?;
                (Dataset::Classification(d), Feedback::frequency(masks))
            }
            (Dataset::Forecasting(f), DecoyKind::FcBackcopy | DecoyKind::FcDirac) => {
                if f.inputs != f.targets {
                    return Err(Error::Invalid("cannot add a decoy on top of a back-copied series".into()));
                }
                let stride = cfg.window_stride.unwrap_or(f.stride);
                let series = ForecastSeries { header: f.header.clone(), values: f.inputs.clone(), train_end: f.train_end, val_end: f.val_end };
                let d = decoy_forecast(&series, std::slice::from_ref(cfg), stride)?;
                let mut inputs = d.train_inputs;
                inputs.extend_from_slice(&d.series.values[f.train_end..]);
                let data = ForecastData::new(d.series.header, inputs, d.series.values, f.train_end, f.val_end, stride)?;
                (Dataset::Forecasting(data), Feedback { time: d.time_feedback, frequency: d.frequency_feedback })
            }
            (_, kind) => return Err(Error::Invalid(format!("{} does not apply to {:?} data", kind.name(), self.task()))),
        };
        let header = match &mut out {
            Dataset::Classification(d) => &mut d.header,
            Dataset::Forecasting(f) => &mut f.header,
        };
        if let Some(last) = header.decoys.last_mut() {
            last.seed = seed;
        }
        Ok((out, MaskFile::from_feedback(&feedback)))
    }

    /// Stride of the forecasting windows, if any.
    pub fn stride(&self) -> Option<usize> {
        match self {
            Dataset::Classification(_) => None,
            Dataset::Forecasting(f) => Some(f.stride),
        }
    }
}
