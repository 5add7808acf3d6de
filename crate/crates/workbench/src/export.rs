//! Attribution export: `{sample_id, domain: "time", values}` or
//! `{sample_id, domain: "freq", re, im}`.

use serde::{Deserialize, Serialize};
use tsxil_core::attribution::{explain, frequency_attribution, Attribution, AttributionTarget, IgConfig};
use tsxil_core::models::Network;

use crate::error::Result;
use crate::masks::Domain;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionExport {
    pub sample_id: usize,
    pub domain: Domain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub re: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub im: Option<Vec<f64>>,
    pub target: AttributionTarget,
}

impl AttributionExport {
    pub fn new(sample_id: usize, domain: Domain, attribution: &Attribution) -> Self {
        match domain {
            Domain::Time => Self {
                sample_id,
                domain,
                values: Some(attribution.values.clone()),
                re: None,
                im: None,
                target: attribution.target,
            },
            Domain::Freq => {
                let spectrum = frequency_attribution(attribution).spectrum;
                Self { sample_id, domain, values: None, re: Some(spectrum.re), im: Some(spectrum.im), target: attribution.target }
            }
        }
    }
}

/// Display target: the predicted class, or the forecast mean.
pub fn display_target(model: &Network) -> AttributionTarget {
    if model.architecture().is_classifier() {
        AttributionTarget::Argmax
    } else {
        AttributionTarget::OutputMean
    }
}

pub fn explain_sample(model: &Network, x: &[f64], sample_id: usize, domain: Domain, cfg: &IgConfig) -> Result<AttributionExport> {
    let attribution = explain(model, x, display_target(model), cfg)?;
    Ok(AttributionExport::new(sample_id, domain, &attribution))
}
