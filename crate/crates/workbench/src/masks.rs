//! Mask file contract shared with the annotation frontend.
//!
//! A mask file is a JSON array of entries
//! `{"sample_id", "domain": "time" | "freq", "intervals": [[s, e], …]}` or
//! `{"sample_id", "domain": "freq", "re_bins": […], "im_bins": […]}`, each
//! optionally carrying `"broadcast": true` to apply to every sample.
//! Intervals are half-open.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tsxil_core::feedback::{Feedback, FeedbackSet, FrequencyMask, Mask, TimeMask};

use crate::error::{Error, FieldError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Time,
    Freq,
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time" => Ok(Domain::Time),
            "freq" => Ok(Domain::Freq),
            other => Err(Error::Invalid(format!("unknown domain {other:?}, expected time or freq"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub sample_id: usize,
    pub domain: Domain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervals: Option<Vec<(usize, usize)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub re_bins: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub im_bins: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub broadcast: bool,
}

impl MaskEntry {
    pub fn time(sample_id: usize, intervals: Vec<(usize, usize)>) -> Self {
        Self { sample_id, domain: Domain::Time, intervals: Some(intervals), re_bins: None, im_bins: None, broadcast: false }
    }

    pub fn freq(sample_id: usize, re_bins: Vec<usize>, im_bins: Vec<usize>) -> Self {
        Self { sample_id, domain: Domain::Freq, intervals: None, re_bins: Some(re_bins), im_bins: Some(im_bins), broadcast: false }
    }

    pub fn broadcast(mut self) -> Self {
        self.broadcast = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MaskFile(pub Vec<MaskEntry>);

const FIELDS: [&str; 6] = ["sample_id", "domain", "intervals", "re_bins", "im_bins", "broadcast"];

fn index_list(v: &Value, path: &str, errors: &mut Vec<FieldError>) {
    match v.as_array() {
        Some(items) => {
            for (i, item) in items.iter().enumerate() {
                if item.as_u64().is_none() {
                    errors.push(FieldError::new(format!("{path}[{i}]"), "expected a nonnegative integer"));
                }
            }
        }
        None => errors.push(FieldError::new(path, "expected an array of bin indices")),
    }
}

fn check_entry(i: usize, v: &Value, errors: &mut Vec<FieldError>) {
    let at = |f: &str| format!("[{i}].{f}");
    let Some(obj) = v.as_object() else {
        errors.push(FieldError::new(format!("[{i}]"), "expected an object"));
        return;
    };
    for key in obj.keys().filter(|k| !FIELDS.contains(&k.as_str())) {
        errors.push(FieldError::new(at(key), "unknown field"));
    }
    match obj.get("sample_id") {
        Some(s) if s.as_u64().is_some() => {}
        Some(_) => errors.push(FieldError::new(at("sample_id"), "expected a nonnegative integer")),
        None => errors.push(FieldError::new(at("sample_id"), "missing field")),
    }
    let domain = match obj.get("domain").map(|d| d.as_str()) {
        Some(Some("time")) => Some(Domain::Time),
        Some(Some("freq")) => Some(Domain::Freq),
        Some(_) => {
            errors.push(FieldError::new(at("domain"), "expected \"time\" or \"freq\""));
            None
        }
        None => {
            errors.push(FieldError::new(at("domain"), "missing field"));
            None
        }
    };
    if let Some(b) = obj.get("broadcast") {
        if !b.is_boolean() {
            errors.push(FieldError::new(at("broadcast"), "expected a boolean"));
        }
    }
    match domain {
        Some(Domain::Time) => {
            for f in ["re_bins", "im_bins"] {
                if obj.contains_key(f) {
                    errors.push(FieldError::new(at(f), "not allowed for time entries"));
                }
            }
            match obj.get("intervals") {
                None => errors.push(FieldError::new(at("intervals"), "missing field")),
                Some(Value::Array(items)) => {
                    for (j, item) in items.iter().enumerate() {
                        let ok = item.as_array().is_some_and(|p| p.len() == 2 && p.iter().all(|x| x.as_u64().is_some()));
                        if !ok {
                            errors.push(FieldError::new(format!("[{i}].intervals[{j}]"), "expected [start, end]"));
                        }
                    }
                }
                Some(_) => errors.push(FieldError::new(at("intervals"), "expected an array of [start, end] pairs")),
            }
        }
        Some(Domain::Freq) => {
            if obj.contains_key("intervals") {
                errors.push(FieldError::new(at("intervals"), "not allowed for freq entries"));
            }
            if !obj.contains_key("re_bins") && !obj.contains_key("im_bins") {
                errors.push(FieldError::new(at("re_bins"), "freq entries need re_bins or im_bins"));
            }
            for f in ["re_bins", "im_bins"] {
                if let Some(list) = obj.get(f) {
                    index_list(list, &at(f), errors);
                }
            }
        }
        None => {}
    }
}

impl MaskFile {
    /// Parses and checks the document structure, reporting every
    /// offending field.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let value: Value = serde_json::from_slice(bytes)?;
        let Some(items) = value.as_array() else {
            return Err(Error::Validation(vec![FieldError::new("", "expected a JSON array of mask entries")]));
        };
        let mut errors = Vec::new();
        for (i, v) in items.iter().enumerate() {
            check_entry(i, v, &mut errors);
        }
        if !errors.is_empty() {
            return Err(Error::Validation(errors));
        }
        Ok(serde_json::from_value(value)?)
    }

    /// Canonical compact serialization; parsing it back is lossless.
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("mask entries always serialize")
    }

    /// Checks sample ids, intervals and bins against a dataset of
    /// `samples` series of length `len`.
    pub fn validate(&self, samples: usize, len: usize) -> Result<()> {
        let mut errors = Vec::new();
        for (i, e) in self.0.iter().enumerate() {
            if e.sample_id >= samples {
                errors.push(FieldError::new(format!("[{i}].sample_id"), format!("{} is beyond the {samples} samples", e.sample_id)));
            }
            for (j, &(s, end)) in e.intervals.iter().flatten().enumerate() {
                if s >= end || end > len {
                    errors.push(FieldError::new(
                        format!("[{i}].intervals[{j}]"),
                        format!("[{s}, {end}) is not a nonempty interval within length {len}"),
                    ));
                }
            }
            for (f, bins) in [("re_bins", &e.re_bins), ("im_bins", &e.im_bins)] {
                for (j, &b) in bins.iter().flatten().enumerate() {
                    if b >= len {
                        errors.push(FieldError::new(format!("[{i}].{f}[{j}]"), format!("bin {b} is beyond length {len}")));
                    }
                }
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }

    /// Per-sample masks for a dataset; broadcast entries apply to every
    /// sample and overlapping entries are merged.
    pub fn to_feedback(&self, samples: usize, len: usize) -> Result<Feedback> {
        self.validate(samples, len)?;
        let targets = |e: &MaskEntry| if e.broadcast { 0..samples } else { e.sample_id..e.sample_id + 1 };
        let has = |d: Domain| self.0.iter().any(|e| e.domain == d);
        let time = has(Domain::Time).then(|| {
            let mut masks: Vec<TimeMask> = (0..samples).map(|i| TimeMask::empty(i, len)).collect();
            for e in self.0.iter().filter(|e| e.domain == Domain::Time) {
                for i in targets(e) {
                    for &(s, end) in e.intervals.iter().flatten() {
                        masks[i].bits[s..end].iter_mut().for_each(|b| *b = true);
                    }
                }
            }
            FeedbackSet::new(masks)
        });
        let frequency = has(Domain::Freq).then(|| {
            let mut masks: Vec<FrequencyMask> = (0..samples).map(|i| FrequencyMask::empty(i, len)).collect();
            for e in self.0.iter().filter(|e| e.domain == Domain::Freq) {
                for i in targets(e) {
                    e.re_bins.iter().flatten().for_each(|&b| masks[i].re_bits[b] = true);
                    e.im_bins.iter().flatten().for_each(|&b| masks[i].im_bits[b] = true);
                }
            }
            FeedbackSet::new(masks)
        });
        Ok(Feedback { time, frequency })
    }

    /// One entry per nonempty mask.
    pub fn from_feedback(feedback: &Feedback) -> Self {
        let mut entries = Vec::new();
        if let Some(set) = &feedback.time {
            entries.extend(set.masks.iter().filter(|m| !m.is_empty()).map(|m| MaskEntry::time(m.sample_id, m.intervals())));
        }
        if let Some(set) = &feedback.frequency {
            entries.extend(set.masks.iter().filter(|m| !m.is_empty()).map(|m| MaskEntry::freq(m.sample_id, m.re_bins(), m.im_bins())));
        }
        MaskFile(entries)
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|e| {
            e.intervals.as_ref().is_none_or(Vec::is_empty)
                && e.re_bins.as_ref().is_none_or(Vec::is_empty)
                && e.im_bins.as_ref().is_none_or(Vec::is_empty)
        })
    }
}
