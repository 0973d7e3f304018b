// SPDX-License-Identifier: MIT OR Apache-2.0

//! Contiguous patch masking: whole runs of patches are hidden from the model
//! input during training, matching the missing-value tokens used for
//! multi-patch inference.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::TimeSeries;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CpmParams {
    /// Consecutive patches per mask bit, in `1..=c_max`.
    pub c_mask: usize,
    /// Bernoulli probability per mask bit, in `[0, p_max]`.
    pub p_mask: f64,
    pub c_max: usize,
    pub p_max: f64,
}

/// Training-time masking ranges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CpmConfig {
    pub c_max: usize,
    pub p_max: f64,
}

impl Default for CpmConfig {
    fn default() -> Self {
        Self { c_max: 5, p_max: 0.25 }
    }
}

impl CpmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_max == 0 || !(0.0..=1.0).contains(&self.p_max) {
            return Err(Error::Config(format!(
                "cpm: c_max must be >= 1 and p_max in [0, 1], got c_max={} p_max={}",
                self.c_max, self.p_max
            )));
        }
        Ok(())
    }
}

/// Draws `c_mask ~ U{1..c_max}` and `p_mask ~ U[0, p_max]`.
pub fn sample_cpm_params(rng: &mut impl Rng, c_max: usize, p_max: f64) -> CpmParams {
    let c_max = c_max.max(1);
    let c_mask = rng.gen_range(1..=c_max);
    let p_mask = if p_max > 0.0 { rng.gen_range(0.0..=p_max) } else { 0.0 };
    CpmParams {
        c_mask,
        p_mask,
        c_max,
        p_max,
    }
}

/// Bernoulli base mask of length `⌊T / (c_mask·m_out)⌋`, each bit repeated
/// `c_mask·m_out` times; the remainder tail stays unmasked. `true` = masked.
pub fn build_cpm_mask(t: usize, m_out: usize, params: &CpmParams, rng: &mut impl Rng) -> Vec<bool> {
    let run = params.c_mask.max(1) * m_out.max(1);
    let base_len = t / run;
    let mut mask = Vec::with_capacity(t);
    for _ in 0..base_len {
        let bit = params.p_mask > 0.0 && rng.gen_bool(params.p_mask.min(1.0));
        mask.extend(std::iter::repeat_n(bit, run));
    }
    mask.resize(t, false);
    mask
}

/// Masks the final `patches` patches.
pub fn tail_mask(t: usize, m_out: usize, patches: usize) -> Vec<bool> {
    let n = (patches * m_out).min(t);
    let mut mask = vec![false; t - n];
    mask.resize(t, true);
    mask
}

/// Marks masked positions as unobserved (value set to the placeholder).
pub fn apply_mask(series: &TimeSeries, mask: &[bool]) -> Result<TimeSeries> {
    if mask.len() != series.len() {
        return Err(Error::DimensionMismatch(format!(
            "mask has length {}, series has length {}",
            mask.len(),
            series.len()
        )));
    }
    let mut out = series.clone();
    for ((v, o), &m) in out.values.iter_mut().zip(out.observed.iter_mut()).zip(mask) {
        if m {
            *v = 0.0;
            *o = false;
        }
    }
    Ok(out)
}
