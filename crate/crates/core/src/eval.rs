// SPDX-License-Identifier: MIT OR Apache-2.0

//! Forecast metrics (MASE, weighted quantile loss), the seasonal-naive
//! baseline and benchmark-style aggregation (baseline-normalized geometric
//! means and average ranks).

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use log::warn;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forecast, ModelParams, QuantileForecast};
use crate::series::TimeSeries;

/// Pinball loss of a single quantile prediction.
pub fn pinball(q: f64, pred: f64, y: f64) -> f64 {
    if pred <= y {
        q * (y - pred)
    } else {
        (1.0 - q) * (pred - y)
    }
}

/// Repeats the last observed season: `forecast[t] = context[T - s + (t mod s)]`.
pub fn seasonal_naive(context: &[f64], s: usize, h: usize) -> Result<Vec<f64>> {
    if s == 0 {
        return Err(Error::InvalidArgument("season period must be positive".into()));
    }
    let t = context.len();
    if t < s {
        return Err(Error::InvalidArgument(format!("context length {t} is shorter than season {s}")));
    }
    Ok((0..h).map(|i| context[t - s + i % s]).collect())
}

/// Mean absolute error over the horizon divided by the mean absolute
/// in-sample seasonal difference.
pub fn mase(forecast: &[f64], actual: &[f64], context: &[f64], s: usize) -> Result<f64> {
    if forecast.len() != actual.len() || actual.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "forecast has {} steps, actual has {}",
            forecast.len(),
            actual.len()
        )));
    }
    if s == 0 || context.len() <= s {
        return Err(Error::InvalidArgument(format!(
            "MASE needs more than {s} context steps, got {}",
            context.len()
        )));
    }
    let mae = forecast.iter().zip(actual).map(|(f, y)| (f - y).abs()).sum::<f64>() / actual.len() as f64;
    let scale = (s..context.len()).map(|t| (context[t] - context[t - s]).abs()).sum::<f64>()
        / (context.len() - s) as f64;
    if scale == 0.0 {
        return Err(Error::UndefinedMetric("in-sample seasonal-naive error is zero".into()));
    }
    Ok(mae / scale)
}

/// Weighted quantile loss: `mean_q 2·Σ_t QL(q, ŷ_t^q, y_t) / Σ_t |y_t|`.
pub fn wql(pred: ArrayView2<f64>, actual: &[f64], q: &[f64]) -> Result<f64> {
    if pred.nrows() != actual.len() || pred.ncols() != q.len() {
        return Err(Error::DimensionMismatch(format!(
            "predictions {:?} do not match {} steps x {} quantiles",
            pred.dim(),
            actual.len(),
            q.len()
        )));
    }
    let (num, den) = wql_parts(pred, actual, q);
    wql_from_parts(&num, den)
}

/// Per-quantile pinball sums and the absolute-actual sum, for pooling.
pub fn wql_parts(pred: ArrayView2<f64>, actual: &[f64], q: &[f64]) -> (Vec<f64>, f64) {
    let num = q
        .iter()
        .enumerate()
        .map(|(k, &level)| actual.iter().enumerate().map(|(t, &y)| pinball(level, pred[[t, k]], y)).sum())
        .collect();
    (num, actual.iter().map(|y| y.abs()).sum())
}

pub fn wql_from_parts(num: &[f64], den: f64) -> Result<f64> {
    if den == 0.0 {
        return Err(Error::UndefinedMetric("sum of absolute actuals is zero".into()));
    }
    Ok(num.iter().map(|n| 2.0 * n / den).sum::<f64>() / num.len() as f64)
}

/// 1-based ranks, ties share the average of the positions they span.
pub fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn geometric_mean(values: &[f64]) -> f64 {
    (values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp()
}

/// Raw scores of one model on one setting; `None` marks an undefined metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub model: String,
    pub setting: String,
    pub mase: Option<f64>,
    pub wql: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub setting: String,
    pub mase: f64,
    pub wql: f64,
    pub normalized_mase: f64,
    pub normalized_wql: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub gmean_mase: f64,
    pub gmean_wql: f64,
    pub average_rank: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub baseline: String,
    pub settings: Vec<String>,
    pub dropped_settings: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub summary: Vec<ModelSummary>,
}

/// Normalizes every setting by `baseline`, then reports per-model geometric
/// means and the average WQL rank. Settings with an undefined or
/// non-positive score for any model (or the baseline) are dropped for all.
pub fn aggregate(rows: &[ScoreRow], baseline: &str) -> Result<EvalReport> {
    let mut table: BTreeMap<(String, String), &ScoreRow> = BTreeMap::new();
    for r in rows {
        if table.insert((r.setting.clone(), r.model.clone()), r).is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate score for model {} on setting {}",
                r.model, r.setting
            )));
        }
    }
    let models: BTreeSet<&str> = rows.iter().map(|r| r.model.as_str()).collect();
    if !models.contains(baseline) {
        return Err(Error::InvalidArgument(format!("baseline {baseline} has no scores")));
    }
    let all_settings: BTreeSet<&str> = rows.iter().map(|r| r.setting.as_str()).collect();

    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for &setting in &all_settings {
        let get = |m: &str| table.get(&(setting.to_string(), m.to_string()));
        let complete = models.iter().all(|m| {
            matches!(get(m), Some(ScoreRow { mase: Some(a), wql: Some(b), .. }) if a.is_finite() && b.is_finite())
        });
        let base_ok = matches!(get(baseline), Some(ScoreRow { mase: Some(a), wql: Some(b), .. }) if *a > 0.0 && *b > 0.0);
        if complete && base_ok {
            kept.push(setting.to_string());
        } else {
            warn!("dropping setting {setting}: undefined or non-positive scores");
            dropped.push(setting.to_string());
        }
    }
    if kept.is_empty() {
        return Err(Error::Data("no evaluation setting has complete scores".into()));
    }

    let mut out_rows = Vec::new();
    let mut norm_mase: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut norm_wql: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut rank_sum: BTreeMap<&str, f64> = BTreeMap::new();
    let model_list: Vec<&str> = models.iter().copied().collect();
    for setting in &kept {
        let score = |m: &str| table[&(setting.clone(), m.to_string())];
        let base = score(baseline);
        let (bm, bw) = (base.mase.unwrap(), base.wql.unwrap());
        let wqls: Vec<f64> = model_list.iter().map(|m| score(m).wql.unwrap()).collect();
        for (m, r) in model_list.iter().zip(average_ranks(&wqls)) {
            *rank_sum.entry(m).or_default() += r;
        }
        for &m in &model_list {
            let s = score(m);
            let (ms, ws) = (s.mase.unwrap(), s.wql.unwrap());
            let row = ReportRow {
                model: m.to_string(),
                setting: setting.clone(),
                mase: ms,
                wql: ws,
                normalized_mase: ms / bm,
                normalized_wql: ws / bw,
            };
            norm_mase.entry(m).or_default().push(row.normalized_mase);
            norm_wql.entry(m).or_default().push(row.normalized_wql);
            out_rows.push(row);
        }
    }
    let summary = model_list
        .iter()
        .map(|m| ModelSummary {
            model: m.to_string(),
            gmean_mase: geometric_mean(&norm_mase[m]),
            gmean_wql: geometric_mean(&norm_wql[m]),
            average_rank: rank_sum[m] / kept.len() as f64,
        })
        .collect();
    Ok(EvalReport {
        baseline: baseline.to_string(),
        settings: kept,
        dropped_settings: dropped,
        rows: out_rows,
        summary,
    })
}

impl EvalReport {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_files(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(csv_path)?)?;
        let mut f = std::fs::File::create(json_path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        Ok(())
    }
}

/// One benchmark configuration: a dataset file evaluated at a horizon with
/// rolling windows taken from the end of every series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSetting {
    pub name: String,
    pub dataset: String,
    pub horizon: usize,
    pub season_period: usize,
    #[serde(default = "one")]
    pub windows: usize,
}

fn one() -> usize {
    1
}

impl EvalSetting {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.season_period == 0 || self.windows == 0 {
            return Err(Error::Config(format!(
                "setting {}: horizon, season_period and windows must be positive",
                self.name
            )));
        }
        Ok(())
    }
}

pub trait Forecaster: Sync {
    fn name(&self) -> &str;
    fn forecast(&self, context: &TimeSeries, h: usize) -> Result<QuantileForecast>;
}

/// Seasonal-naive point forecast repeated across all quantile levels.
pub struct SeasonalNaive {
    pub season_period: usize,
    pub quantiles: Vec<f64>,
}

impl Forecaster for SeasonalNaive {
    fn name(&self) -> &str {
        "seasonal_naive"
    }

    fn forecast(&self, context: &TimeSeries, h: usize) -> Result<QuantileForecast> {
        let point = seasonal_naive(&context.values, self.season_period, h)?;
        let nq = self.quantiles.len();
        Ok(QuantileForecast {
            values: Array2::from_shape_fn((h, nq), |(t, _)| point[t]),
            quantile_levels: self.quantiles.clone(),
        })
    }
}

pub struct ModelForecaster<'a> {
    pub name: String,
    pub params: &'a ModelParams,
}

impl Forecaster for ModelForecaster<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn forecast(&self, context: &TimeSeries, h: usize) -> Result<QuantileForecast> {
        forecast(context, h, self.params)
    }
}

/// Scores `model` on every usable window of `series` for `setting`. MASE is
/// averaged over windows; WQL pools numerators and denominators.
pub fn evaluate_setting(model: &dyn Forecaster, series: &[TimeSeries], setting: &EvalSetting) -> Result<ScoreRow> {
    setting.validate()?;
    let h = setting.horizon;
    let s = setting.season_period;
    let mut mase_values = Vec::new();
    let mut num: Vec<f64> = Vec::new();
    let mut den = 0.0;
    for ts in series {
        for w in 0..setting.windows {
            let Some(end) = ts.len().checked_sub(w * h) else { continue };
            let Some(split) = end.checked_sub(h) else { continue };
            if split <= s || !ts.observed[split..end].iter().all(|&o| o) {
                continue;
            }
            let context = ts.slice(0, split);
            let actual = &ts.values[split..end];
            let f = model.forecast(&context, h)?;
            if num.is_empty() {
                num = vec![0.0; f.quantile_levels.len()];
            }
            match mase(&f.median(), actual, &context.values, s) {
                Ok(v) => mase_values.push(v),
                Err(Error::UndefinedMetric(msg)) => warn!("{}: window {w} of {}: {msg}", setting.name, ts.id),
                Err(e) => return Err(e),
            }
            let (n, d) = wql_parts(f.values.view(), actual, &f.quantile_levels);
            num.iter_mut().zip(n).for_each(|(a, b)| *a += b);
            den += d;
        }
    }
    let mase = if mase_values.is_empty() {
        None
    } else {
        Some(mase_values.iter().sum::<f64>() / mase_values.len() as f64)
    };
    let wql = if num.is_empty() { None } else { wql_from_parts(&num, den).ok() };
    Ok(ScoreRow {
        model: model.name().to_string(),
        setting: setting.name.clone(),
        mase,
        wql,
    })
}
