//! Right-answer loss, the two right-reason penalties and their weighted sum.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::attribution::{Attribution, FrequencyAttribution};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::feedback::{FrequencyMask, TimeMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Forecasting,
}

/// Targets of a batch: class indices or flattened horizons.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets<'a> {
    Labels(&'a [usize]),
    Values(&'a [f64]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub task: TaskKind,
    /// Weight of the time-domain penalty.
    #[serde(default)]
    pub lambda_sp: f64,
    /// Weight of the frequency-domain penalty.
    #[serde(default)]
    pub lambda_fr: f64,
    /// Divide each right-reason term by the series length.
    #[serde(default)]
    pub normalize_by_len: bool,
}

impl LossConfig {
    pub fn new(task: TaskKind) -> Self {
        Self { task, lambda_sp: 0.0, lambda_fr: 0.0, normalize_by_len: false }
    }

    pub fn with_lambdas(mut self, lambda_sp: f64, lambda_fr: f64) -> Self {
        self.lambda_sp = lambda_sp;
        self.lambda_fr = lambda_fr;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_sp >= 0.0 && self.lambda_fr >= 0.0) {
            return Err(Error::Config("lambda weights must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub ra: f64,
    pub rr_sp: f64,
    pub rr_fr: f64,
    pub total: f64,
}

/// Cross-entropy on logits `[B, K]` or mean squared error on `[B, W]`.
pub fn right_answer_loss<'t>(predictions: Var<'t>, targets: &Targets<'_>) -> Result<Var<'t>> {
    let shape = predictions.shape();
    if shape.len() != 2 {
        return Err(Error::Shape(alloc::format!("predictions must be [batch, outputs], got {shape:?}")));
    }
    let (batch, outputs) = (shape[0], shape[1]);
    let tape = predictions.tape();
    match targets {
        Targets::Labels(labels) => {
            if labels.len() != batch {
                return Err(Error::Shape(alloc::format!("{} labels for {batch} predictions", labels.len())));
            }
            let mut onehot = vec![0.0; batch * outputs];
            for (b, &y) in labels.iter().enumerate() {
                if y >= outputs {
                    return Err(Error::LabelOutOfRange(y));
                }
                onehot[b * outputs + y] = 1.0;
            }
            let picked = (predictions * tape.constant(shape, onehot)).sum_cols();
            Ok((predictions.logsumexp_cols() - picked).mean())
        }
        Targets::Values(values) => {
            if values.len() != batch * outputs {
                return Err(Error::Shape(alloc::format!("{} targets for {} predictions", values.len(), batch * outputs)));
            }
            Ok((predictions - tape.constant(shape, values.to_vec())).square().mean())
        }
    }
}

/// `(1/D) Σ_x Σ_t (e_t·a_t)²` for attributions `[B, T]` and a mask of the
/// same shape; `batch` is the `D` of the full batch.
pub fn rr_spatial_var<'t>(attrs: Var<'t>, mask: &[f64], batch: usize) -> Var<'t> {
    let masked = attrs * attrs.tape().constant(attrs.shape(), mask.to_vec());
    masked.square().sum().scale(1.0 / batch as f64)
}

/// `(1/D) Σ_x Σ_k (Re ê_k·â_re,k)² + (Im ê_k·â_im,k)²` on spectra `[B, T]`.
pub fn rr_frequency_var<'t>(re: Var<'t>, im: Var<'t>, re_mask: &[f64], im_mask: &[f64], batch: usize) -> Var<'t> {
    let tape = re.tape();
    let re_part = (re * tape.constant(re.shape(), re_mask.to_vec())).square().sum();
    let im_part = (im * tape.constant(im.shape(), im_mask.to_vec())).square().sum();
    (re_part + im_part).scale(1.0 / batch as f64)
}

fn check_batch(attrs: usize, masks: usize) -> Result<()> {
    if attrs != masks {
        return Err(Error::Shape(alloc::format!("{attrs} attributions for {masks} masks")));
    }
    Ok(())
}

fn flags(bits: &[bool]) -> impl Iterator<Item = f64> + '_ {
    bits.iter().map(|&b| if b { 1.0 } else { 0.0 })
}

/// Time-domain right-reason penalty on finished attributions.
pub fn rr_spatial(attrs: &[Attribution], masks: &[TimeMask]) -> Result<f64> {
    check_batch(attrs.len(), masks.len())?;
    if attrs.is_empty() {
        return Ok(0.0);
    }
    let len = attrs[0].len();
    if attrs.iter().zip(masks).any(|(e, a)| e.len() != len || a.len() != len) {
        return Err(Error::Shape("attribution and mask lengths differ".into()));
    }
    let tape = Tape::new();
    let e = tape.constant(vec![attrs.len(), len], attrs.iter().flat_map(|a| a.values.iter().copied()).collect());
    let mask: Vec<f64> = masks.iter().flat_map(|m| flags(&m.bits)).collect();
    Ok(rr_spatial_var(e, &mask, attrs.len()).item())
}

/// Frequency-domain right-reason penalty on finished spectra.
pub fn rr_frequency(attrs: &[FrequencyAttribution], masks: &[FrequencyMask]) -> Result<f64> {
    check_batch(attrs.len(), masks.len())?;
    if attrs.is_empty() {
        return Ok(0.0);
    }
    let len = attrs[0].spectrum.len();
    if attrs.iter().zip(masks).any(|(e, a)| e.spectrum.len() != len || a.len() != len) {
        return Err(Error::Shape("spectrum and mask lengths differ".into()));
    }
    let tape = Tape::new();
    let shape = vec![attrs.len(), len];
    let re = tape.constant(shape.clone(), attrs.iter().flat_map(|a| a.spectrum.re.iter().copied()).collect());
    let im = tape.constant(shape, attrs.iter().flat_map(|a| a.spectrum.im.iter().copied()).collect());
    let re_mask: Vec<f64> = masks.iter().flat_map(|m| flags(&m.re_bits)).collect();
    let im_mask: Vec<f64> = masks.iter().flat_map(|m| flags(&m.im_bits)).collect();
    Ok(rr_frequency_var(re, im, &re_mask, &im_mask, attrs.len()).item())
}

/// `ra + λ_sp·rr_sp + λ_fr·rr_fr`.
pub fn combined_loss(ra: f64, rr_sp: f64, rr_fr: f64, cfg: &LossConfig) -> LossReport {
    LossReport { ra, rr_sp, rr_fr, total: ra + cfg.lambda_sp * rr_sp + cfg.lambda_fr * rr_fr }
}

/// Differentiable form of [`combined_loss`]; absent terms are not added at
/// all, so a batch without feedback yields exactly the right-answer graph.
pub fn combined_loss_var<'t>(ra: Var<'t>, rr_sp: Option<Var<'t>>, rr_fr: Option<Var<'t>>, cfg: &LossConfig) -> Var<'t> {
    let mut total = ra;
    if let Some(sp) = rr_sp {
        total = total + sp.scale(cfg.lambda_sp);
    }
    if let Some(fr) = rr_fr {
        total = total + fr.scale(cfg.lambda_fr);
    }
    total
}
