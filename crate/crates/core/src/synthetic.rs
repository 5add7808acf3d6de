//! Seeded generators for the toy tasks used in tests and experiments.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::ClassificationDataset;
use crate::error::{Error, Result};

/// Two classes told apart by the sign of a small bump at a random position
/// inside `[region_start, T)`, buried in white noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BumpTask {
    pub samples: usize,
    pub len: usize,
    pub amplitude: f64,
    pub width: f64,
    pub noise: f64,
    /// First position a bump centre may take.
    pub region_start: usize,
}

impl Default for BumpTask {
    fn default() -> Self {
        Self { samples: 400, len: 64, amplitude: 1.0, width: 3.0, noise: 1.0, region_start: 24 }
    }
}

impl BumpTask {
    pub fn generate(&self, seed: u64) -> Result<ClassificationDataset> {
        if self.region_start + 4 > self.len || self.samples == 0 {
            return Err(Error::Config("bump region does not fit the series".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, self.noise).map_err(|_| Error::Config("noise must be nonnegative".into()))?;
        let margin = libm::ceil(self.width) as usize;
        let hi = self.len.saturating_sub(margin).max(self.region_start + 1);
        let mut series = Vec::with_capacity(self.samples);
        let mut labels = Vec::with_capacity(self.samples);
        for i in 0..self.samples {
            let label = i % 2;
            let sign = if label == 0 { 1.0 } else { -1.0 };
            let centre = rng.random_range(self.region_start..hi) as f64;
            let x: Vec<f64> = (0..self.len)
                .map(|t| {
                    let d = (t as f64 - centre) / self.width;
                    sign * self.amplitude * libm::exp(-0.5 * d * d) + noise.sample(&mut rng)
                })
                .collect();
            series.push(x);
            labels.push(label);
        }
        ClassificationDataset::new("bump", series, labels)
    }
}

/// Linearly separable two-class set: the class sets the mean level.
pub fn separable(samples: usize, len: usize, seed: u64) -> Result<ClassificationDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.3).expect("valid deviation");
    let mut series = Vec::with_capacity(samples);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let label = i % 2;
        let level = if label == 0 { 1.0 } else { -1.0 };
        series.push((0..len).map(|_| level + noise.sample(&mut rng)).collect());
        labels.push(label);
    }
    ClassificationDataset::new("separable", series, labels)
}

/// Sum of sines with the given periods and amplitudes plus white noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeasonalSeries {
    pub len: usize,
    pub components: Vec<(f64, f64)>,
    pub noise: f64,
}

impl Default for SeasonalSeries {
    fn default() -> Self {
        Self { len: 2400, components: vec![(20.0, 1.0), (7.0, 0.5)], noise: 0.1 }
    }
}

impl SeasonalSeries {
    pub fn generate(&self, seed: u64) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, self.noise).map_err(|_| Error::Config("noise must be nonnegative".into()))?;
        let phases: Vec<f64> = self.components.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        Ok((0..self.len)
            .map(|t| {
                let clean: f64 = self
                    .components
                    .iter()
                    .zip(&phases)
                    .map(|((period, amp), phase)| amp * libm::sin(2.0 * PI * t as f64 / period + phase))
                    .sum();
                clean + noise.sample(&mut rng)
            })
            .collect())
    }
}

/// Noise-free sinusoid with the given period and phase.
pub fn sinusoid(len: usize, period: f64, phase: f64) -> Vec<f64> {
    (0..len).map(|t| libm::sin(2.0 * PI * t as f64 / period + phase)).collect()
}
