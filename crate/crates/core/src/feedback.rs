//! Feedback masks in the time and frequency domain, plus the coverage and
//! noise transforms used in the feedback ablations.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary mask over time steps; all-zero means "no feedback".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeMask {
    pub sample_id: usize,
    pub bits: Vec<bool>,
}

impl TimeMask {
    pub fn empty(sample_id: usize, len: usize) -> Self {
        Self { sample_id, bits: vec![false; len] }
    }

    /// Sets the bits on the union of half-open `[start, end)` intervals.
    pub fn from_intervals(sample_id: usize, intervals: &[(usize, usize)], len: usize) -> Result<Self> {
        let mut mask = Self::empty(sample_id, len);
        for &(start, end) in intervals {
            if start >= end || end > len {
                return Err(Error::InvalidInterval { start, end, len });
            }
            mask.bits[start..end].iter_mut().for_each(|b| *b = true);
        }
        Ok(mask)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Maximal runs of set bits as `[start, end)` pairs.
    pub fn intervals(&self) -> Vec<(usize, usize)> {
        runs(&self.bits)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// Convenience form of [`TimeMask::from_intervals`] for a single sample.
pub fn mask_from_intervals(intervals: &[(usize, usize)], len: usize) -> Result<TimeMask> {
    TimeMask::from_intervals(0, intervals, len)
}

/// Masks on the real and imaginary parts of a full-length spectrum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyMask {
    pub sample_id: usize,
    pub re_bits: Vec<bool>,
    pub im_bits: Vec<bool>,
}

impl FrequencyMask {
    pub fn empty(sample_id: usize, len: usize) -> Self {
        Self { sample_id, re_bits: vec![false; len], im_bits: vec![false; len] }
    }

    pub fn from_bins(sample_id: usize, len: usize, re_bins: &[usize], im_bins: &[usize]) -> Result<Self> {
        let mut mask = Self::empty(sample_id, len);
        for (bins, bits) in [(re_bins, &mut mask.re_bits), (im_bins, &mut mask.im_bits)] {
            for &k in bins {
                if k >= len {
                    return Err(Error::InvalidInterval { start: k, end: k + 1, len });
                }
                bits[k] = true;
            }
        }
        Ok(mask)
    }

    /// Same bins marked on both parts.
    pub fn joint(sample_id: usize, len: usize, bins: &[usize]) -> Result<Self> {
        Self::from_bins(sample_id, len, bins, bins)
    }

    pub fn len(&self) -> usize {
        self.re_bits.len()
    }

    pub fn re_bins(&self) -> Vec<usize> {
        set_positions(&self.re_bits)
    }

    pub fn im_bins(&self) -> Vec<usize> {
        set_positions(&self.im_bits)
    }

    pub fn count(&self) -> usize {
        self.re_bins().len() + self.im_bins().len()
    }
}

fn set_positions(bits: &[bool]) -> Vec<usize> {
    bits.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i).collect()
}

fn runs(bits: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &b) in bits.iter().enumerate() {
        match (b, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, bits.len()));
    }
    out
}

/// Shared behaviour of the two mask kinds.
pub trait Mask: Clone {
    fn is_empty(&self) -> bool;
    fn clear(&mut self);
    /// Moves the marks to uniformly chosen positions outside the current
    /// marks, keeping their number.
    fn relocate(&mut self, rng: &mut ChaCha8Rng);
}

/// Picks `count` positions outside `taken`; if there are not enough free
/// positions the remainder is drawn from `taken`.
fn pick_elsewhere(taken: &[bool], count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let free: Vec<usize> = (0..taken.len()).filter(|&i| !taken[i]).collect();
    let mut chosen: Vec<usize> = index::sample(rng, free.len(), count.min(free.len()))
        .into_iter()
        .map(|i| free[i])
        .collect();
    if count > free.len() {
        let used: Vec<usize> = set_positions(taken);
        chosen.extend(index::sample(rng, used.len(), count - free.len()).into_iter().map(|i| used[i]));
    }
    chosen.sort_unstable();
    chosen
}

impl Mask for TimeMask {
    fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    fn clear(&mut self) {
        self.bits.iter_mut().for_each(|b| *b = false);
    }

    fn relocate(&mut self, rng: &mut ChaCha8Rng) {
        let chosen = pick_elsewhere(&self.bits, self.count(), rng);
        self.clear();
        for i in chosen {
            self.bits[i] = true;
        }
    }
}

impl Mask for FrequencyMask {
    fn is_empty(&self) -> bool {
        !self.re_bits.iter().chain(&self.im_bits).any(|b| *b)
    }

    fn clear(&mut self) {
        self.re_bits.iter_mut().chain(self.im_bits.iter_mut()).for_each(|b| *b = false);
    }

    /// Real and imaginary marks move jointly: the union of marked bins is
    /// relocated and each new bin inherits the re/im flags of the bin it
    /// replaces, so both counts are kept.
    fn relocate(&mut self, rng: &mut ChaCha8Rng) {
        let union: Vec<bool> = self.re_bits.iter().zip(&self.im_bits).map(|(a, b)| *a || *b).collect();
        let old = set_positions(&union);
        let new = pick_elsewhere(&union, old.len(), rng);
        let flags: Vec<(bool, bool)> = old.iter().map(|&k| (self.re_bits[k], self.im_bits[k])).collect();
        self.clear();
        for (&k, (re, im)) in new.iter().zip(flags) {
            self.re_bits[k] = re;
            self.im_bits[k] = im;
        }
    }
}

/// Per-sample masks for a dataset plus how they were derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackSet<M> {
    pub masks: Vec<M>,
    /// Fraction of samples that kept their feedback.
    pub coverage: f64,
    /// Fraction of samples whose feedback was relocated.
    pub noise: f64,
    pub seed: Option<u64>,
}

fn check_fraction(value: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::Config(alloc::format!("{what} must lie in [0, 1], got {value}")))
    }
}

fn selection_size(fraction: f64, total: usize) -> usize {
    libm::round(fraction * total as f64) as usize
}

impl<M: Mask> FeedbackSet<M> {
    pub fn new(masks: Vec<M>) -> Self {
        Self { masks, coverage: 1.0, noise: 0.0, seed: None }
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn annotated(&self) -> usize {
        self.masks.iter().filter(|m| !m.is_empty()).count()
    }

    pub fn has_feedback(&self) -> bool {
        self.masks.iter().any(|m| !m.is_empty())
    }

    /// Keeps the masks of exactly `round(p·D)` uniformly chosen samples and
    /// clears the rest.
    pub fn subset(&self, fraction: f64, seed: u64) -> Result<Self> {
        check_fraction(fraction, "feedback fraction")?;
        let total = self.masks.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep = vec![false; total];
        for i in index::sample(&mut rng, total, selection_size(fraction, total)) {
            keep[i] = true;
        }
        let masks = self
            .masks
            .iter()
            .zip(keep)
            .map(|(m, k)| {
                let mut m = m.clone();
                if !k {
                    m.clear();
                }
                m
            })
            .collect();
        Ok(Self { masks, coverage: self.coverage * fraction, noise: self.noise, seed: Some(seed) })
    }

    /// Replaces the masks of `round(q·D)` uniformly chosen samples by masks
    /// of equal cardinality placed away from the true marks.
    pub fn noisy(&self, fraction: f64, seed: u64) -> Result<Self> {
        check_fraction(fraction, "noise fraction")?;
        let total = self.masks.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut masks = self.masks.clone();
        let mut chosen = index::sample(&mut rng, total, selection_size(fraction, total)).into_vec();
        chosen.sort_unstable();
        for i in chosen {
            masks[i].relocate(&mut rng);
        }
        Ok(Self { masks, coverage: self.coverage, noise: fraction, seed: Some(seed) })
    }
}

pub fn subset_feedback<M: Mask>(set: &FeedbackSet<M>, fraction: f64, seed: u64) -> Result<FeedbackSet<M>> {
    set.subset(fraction, seed)
}

pub fn noisy_feedback<M: Mask>(set: &FeedbackSet<M>, fraction: f64, seed: u64) -> Result<FeedbackSet<M>> {
    set.noisy(fraction, seed)
}

/// Feedback for one training run: either domain may be absent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Feedback {
    pub time: Option<FeedbackSet<TimeMask>>,
    pub frequency: Option<FeedbackSet<FrequencyMask>>,
}

impl Feedback {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn time(set: FeedbackSet<TimeMask>) -> Self {
        Self { time: Some(set), frequency: None }
    }

    pub fn frequency(set: FeedbackSet<FrequencyMask>) -> Self {
        Self { time: None, frequency: Some(set) }
    }

    pub fn both(time: FeedbackSet<TimeMask>, frequency: FeedbackSet<FrequencyMask>) -> Self {
        Self { time: Some(time), frequency: Some(frequency) }
    }

    /// Checks that every mask matches the sample count and series length.
    pub fn validate(&self, samples: usize, len: usize) -> Result<()> {
        let bad = |what: &str| Err(Error::Shape(alloc::format!("{what} feedback does not match {samples} samples of length {len}")));
        if let Some(t) = &self.time {
            if t.masks.len() != samples || t.masks.iter().any(|m| m.len() != len) {
                return bad("time");
            }
        }
        if let Some(f) = &self.frequency {
            if f.masks.len() != samples || f.masks.iter().any(|m| m.len() != len) {
                return bad("frequency");
            }
        }
        Ok(())
    }
}
