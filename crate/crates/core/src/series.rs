// SPDX-License-Identifier: MIT OR Apache-2.0

//! Univariate series container, instance normalization and patching.
//!
//! Unobserved positions always carry the placeholder value `0.0`; nothing
//! downstream reads them, and after normalization the placeholder coincides
//! with the series mean so a masked input carries no signal beyond its mask bit.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum standard deviation used by instance normalization.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    pub id: String,
    pub values: Vec<f64>,
    pub observed: Vec<bool>,
    pub season_period: Option<usize>,
    pub freq: Option<String>,
}

impl TimeSeries {
    /// Fully observed series.
    pub fn new(id: impl Into<String>, values: Vec<f64>) -> Self {
        let observed = vec![true; values.len()];
        Self {
            id: id.into(),
            values,
            observed,
            season_period: None,
            freq: None,
        }
    }

    /// Series with an explicit observation mask. Values at unobserved
    /// positions are replaced by the placeholder.
    pub fn with_mask(id: impl Into<String>, mut values: Vec<f64>, observed: Vec<bool>) -> Result<Self> {
        if values.len() != observed.len() {
            return Err(Error::DimensionMismatch(format!(
                "values has length {} but observed has length {}",
                values.len(),
                observed.len()
            )));
        }
        for (v, &o) in values.iter_mut().zip(&observed) {
            if !o {
                *v = 0.0;
            }
        }
        Ok(Self {
            id: id.into(),
            values,
            observed,
            season_period: None,
            freq: None,
        })
    }

    pub fn with_season_period(mut self, s: Option<usize>) -> Self {
        self.season_period = s;
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn observed_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().zip(&self.observed).filter(|(_, &o)| o).map(|(&v, _)| v)
    }

    /// Sub-series over `start..end`, keeping metadata.
    pub fn slice(&self, start: usize, end: usize) -> TimeSeries {
        TimeSeries {
            id: self.id.clone(),
            values: self.values[start..end].to_vec(),
            observed: self.observed[start..end].to_vec(),
            season_period: self.season_period,
            freq: self.freq.clone(),
        }
    }

    /// Prepends `n` unobserved placeholder steps.
    pub fn left_pad(&self, n: usize) -> TimeSeries {
        let mut values = vec![0.0; n];
        values.extend_from_slice(&self.values);
        let mut observed = vec![false; n];
        observed.extend_from_slice(&self.observed);
        TimeSeries {
            id: self.id.clone(),
            values,
            observed,
            season_period: self.season_period,
            freq: self.freq.clone(),
        }
    }

    /// Applies `f` to every observed value; placeholders are left untouched.
    pub fn map_observed(&self, mut f: impl FnMut(usize, f64) -> f64) -> TimeSeries {
        let mut out = self.clone();
        for (t, (v, &o)) in out.values.iter_mut().zip(&self.observed).enumerate() {
            if o {
                *v = f(t, *v);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub const IDENTITY: NormStats = NormStats { mean: 0.0, std: 1.0 };

    /// Mean and population standard deviation over observed positions.
    pub fn from_series(series: &TimeSeries) -> Result<Self> {
        let n = series.observed_count();
        if n == 0 {
            return Err(Error::NoObservedValues);
        }
        let mean = series.observed_values().sum::<f64>() / n as f64;
        let var = series.observed_values().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Ok(NormStats {
            mean,
            std: var.sqrt().max(STD_FLOOR),
        })
    }
}

/// Z-scores the observed values of `series`.
pub fn zscore_normalize(series: &TimeSeries) -> Result<(TimeSeries, NormStats)> {
    let stats = NormStats::from_series(series)?;
    Ok((normalize_with(series, stats), stats))
}

pub fn normalize_with(series: &TimeSeries, stats: NormStats) -> TimeSeries {
    series.map_observed(|_, v| (v - stats.mean) / stats.std)
}

pub fn denormalize(values: &[f64], stats: NormStats) -> Vec<f64> {
    values.iter().map(|v| v * stats.std + stats.mean).collect()
}

/// Normalized, patchified model input for one series.
#[derive(Clone, Debug)]
pub struct PatchBatch {
    /// `[n_patches, 2*m_in]`: normalized values followed by presence indicators.
    pub tokens: Array2<f64>,
    pub token_observed: Array2<bool>,
    /// `[n_patches, m_out]`: row k holds the window following token k.
    pub targets: Array2<f64>,
    pub target_observed: Array2<bool>,
    pub stats: NormStats,
    /// Unobserved steps prepended to reach a multiple of the patch size.
    pub left_pad: usize,
}

impl PatchBatch {
    pub fn n_patches(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn patch_size(&self) -> usize {
        self.token_observed.ncols()
    }

    /// Appends `k` fully unobserved tokens (value 0, presence 0) with
    /// unobserved targets.
    pub fn append_placeholders(&mut self, k: usize) {
        if k == 0 {
            return;
        }
        let n = self.n_patches();
        let m = self.patch_size();
        let grow = |a: &Array2<f64>, cols: usize| {
            let mut out = Array2::zeros((n + k, cols));
            out.slice_mut(s![..n, ..]).assign(a);
            out
        };
        let grow_b = |a: &Array2<bool>| {
            let mut out = Array2::from_elem((n + k, m), false);
            out.slice_mut(s![..n, ..]).assign(a);
            out
        };
        self.tokens = grow(&self.tokens, 2 * m);
        self.targets = grow(&self.targets, m);
        self.token_observed = grow_b(&self.token_observed);
        self.target_observed = grow_b(&self.target_observed);
    }
}

fn check_patch_sizes(m_in: usize, m_out: usize) -> Result<()> {
    if m_in == 0 {
        return Err(Error::InvalidPatchSize(m_in));
    }
    if m_out == 0 {
        return Err(Error::InvalidPatchSize(m_out));
    }
    if m_in != m_out {
        return Err(Error::InvalidArgument(format!(
            "input patch size {m_in} must equal output patch size {m_out}"
        )));
    }
    Ok(())
}

/// Normalizes `series` and splits it into non-overlapping patches.
pub fn patchify(series: &TimeSeries, m_in: usize, m_out: usize) -> Result<PatchBatch> {
    check_patch_sizes(m_in, m_out)?;
    let (norm, stats) = zscore_normalize(series)?;
    patchify_normalized(&norm, &norm, stats, m_in)
}

/// Like [`patchify`] but hides the positions flagged in `input_mask` from the
/// model input. Statistics and targets use the full series.
pub fn patchify_masked(series: &TimeSeries, input_mask: &[bool], m_in: usize, m_out: usize) -> Result<PatchBatch> {
    check_patch_sizes(m_in, m_out)?;
    let (norm, stats) = zscore_normalize(series)?;
    let input = crate::cpm::apply_mask(&norm, input_mask)?;
    patchify_normalized(&input, &norm, stats, m_in)
}

/// Patches already-normalized input and target series of equal length.
pub fn patchify_normalized(input: &TimeSeries, target: &TimeSeries, stats: NormStats, m: usize) -> Result<PatchBatch> {
    if m == 0 {
        return Err(Error::InvalidPatchSize(m));
    }
    if input.len() != target.len() {
        return Err(Error::DimensionMismatch(format!(
            "input length {} differs from target length {}",
            input.len(),
            target.len()
        )));
    }
    if input.is_empty() {
        return Err(Error::InvalidArgument("empty series".into()));
    }
    let t = input.len();
    let left_pad = (m - t % m) % m;
    let n = (t + left_pad) / m;

    let mut tokens = Array2::zeros((n, 2 * m));
    let mut token_observed = Array2::from_elem((n, m), false);
    let mut targets = Array2::zeros((n, m));
    let mut target_observed = Array2::from_elem((n, m), false);

    for p in 0..n * m {
        let Some(src) = p.checked_sub(left_pad) else { continue };
        let (row, col) = (p / m, p % m);
        if input.observed[src] {
            tokens[[row, col]] = input.values[src];
            tokens[[row, m + col]] = 1.0;
            token_observed[[row, col]] = true;
        }
        if row > 0 && target.observed[src] {
            targets[[row - 1, col]] = target.values[src];
            target_observed[[row - 1, col]] = true;
        }
    }

    Ok(PatchBatch {
        tokens,
        token_observed,
        targets,
        target_observed,
        stats,
        left_pad,
    })
}
