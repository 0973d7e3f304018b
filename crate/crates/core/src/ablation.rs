// SPDX-License-Identifier: MIT OR Apache-2.0

//! Small-scale component ablations: masking strategy, inference path and
//! individual augmentations, trained with identical seeds, corpus and model
//! size and scored on a held-out synthetic family.

use std::fmt::Write as _;
use std::io::Write;

use log::{info, warn};
use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{mase, wql};
use crate::model::{assemble_forecast, context_batch, forecast_counted, predict_tokens, ModelConfig, ModelParams, QuantileForecast};
use crate::rng;
use crate::series::TimeSeries;
use crate::train::{train, Corpus, LossRecord, MaskingMode, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Cpm,
    NaiveMultipatch,
    NoMultipatchAutoregressive,
    NoAugment,
    NoCensor,
    NoSpike,
    NoAmplitude,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Cpm,
        Variant::NaiveMultipatch,
        Variant::NoMultipatchAutoregressive,
        Variant::NoAugment,
        Variant::NoCensor,
        Variant::NoSpike,
        Variant::NoAmplitude,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Cpm => "cpm",
            Variant::NaiveMultipatch => "naive_multipatch",
            Variant::NoMultipatchAutoregressive => "no_multipatch_autoregressive",
            Variant::NoAugment => "no_augment",
            Variant::NoCensor => "no_censor",
            Variant::NoSpike => "no_spike",
            Variant::NoAmplitude => "no_amplitude",
        }
    }

    /// Training configuration for this variant derived from the shared one.
    pub fn train_config(self, base: &TrainConfig, long_patches: usize) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.masking = MaskingMode::Cpm;
        match self {
            Variant::Cpm => {}
            Variant::NaiveMultipatch => {
                cfg.masking = MaskingMode::Tail;
                cfg.tail_patches = long_patches;
            }
            Variant::NoMultipatchAutoregressive => cfg.masking = MaskingMode::None,
            Variant::NoAugment => {
                cfg.augment.p_amplitude = 0.0;
                cfg.augment.p_censor = 0.0;
                cfg.augment.p_spike = 0.0;
            }
            Variant::NoCensor => cfg.augment.p_censor = 0.0,
            Variant::NoSpike => cfg.augment.p_spike = 0.0,
            Variant::NoAmplitude => cfg.augment.p_amplitude = 0.0,
        }
        cfg
    }

    pub fn is_autoregressive(self) -> bool {
        self == Variant::NoMultipatchAutoregressive
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSpec {
    pub variants: Vec<Variant>,
    /// Short evaluation horizon in patches.
    pub short_patches: usize,
    /// Long evaluation horizon in patches; also the naive multi-patch tail.
    pub long_patches: usize,
    /// Seed for model initialization (shared by all variants).
    pub init_seed: u64,
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
            short_patches: 1,
            long_patches: 4,
            init_seed: 0,
        }
    }
}

impl AblationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.short_patches == 0 || self.long_patches == 0 {
            return Err(Error::Config("ablation horizons must be at least one patch".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("ablation.variants is empty".into()));
        }
        Ok(())
    }
}

/// Patch-wise autoregressive rollout: each predicted median patch is fed back
/// as an observed input token. Returns the forecast and the number of
/// forward passes (`⌈h / m_out⌉`).
pub fn autoregressive_forecast(context: &TimeSeries, h: usize, params: &ModelParams) -> Result<(QuantileForecast, usize)> {
    if h == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let c = &params.config;
    let (m, nq) = (c.m_out, c.n_quantiles());
    let med = c.median_index();
    let mut batch = context_batch(context, c)?;
    let n = batch.n_patches();
    let k = h.div_ceil(m);
    let mut rows = Array2::zeros((k, m * nq));
    let mut passes = 0;
    for i in 0..k {
        let pred = predict_tokens(params, batch.tokens.view())?;
        passes += 1;
        let row = pred.row(n - 1 + i);
        rows.row_mut(i).assign(&row);
        if i + 1 < k {
            batch.append_placeholders(1);
            let t = n + i;
            for j in 0..m {
                let mut qs: Vec<f64> = row.slice(s![j * nq..(j + 1) * nq]).to_vec();
                qs.sort_by(f64::total_cmp);
                batch.tokens[[t, j]] = qs[med];
                batch.tokens[[t, m + j]] = 1.0;
                batch.token_observed[[t, j]] = true;
            }
        }
    }
    Ok((assemble_forecast(rows.view(), h, &batch, c), passes))
}

/// Forecast along the variant's inference path, with the pass count.
pub fn variant_forecast(variant: Variant, context: &TimeSeries, h: usize, params: &ModelParams) -> Result<(QuantileForecast, usize)> {
    if variant.is_autoregressive() {
        autoregressive_forecast(context, h, params)
    } else {
        forecast_counted(context, h, params)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonScores {
    pub patches: usize,
    pub horizon: usize,
    /// Per held-out series, aligned with the held-out order; `None` if undefined.
    pub wql: Vec<Option<f64>>,
    pub mase: Vec<Option<f64>>,
    pub median_wql: f64,
    pub median_mase: f64,
    pub passes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: Variant,
    pub seed: u64,
    pub train_steps: usize,
    pub parameter_count: usize,
    pub n_series: usize,
    pub short: HorizonScores,
    pub long: HorizonScores,
    pub final_loss: f64,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Scores forecasts of the last `patches·m_out` steps of every held-out series.
pub fn score_heldout(variant: Variant, params: &ModelParams, heldout: &[TimeSeries], patches: usize, default_season: usize) -> Result<HorizonScores> {
    let h = patches * params.config.m_out;
    let mut wqls = Vec::with_capacity(heldout.len());
    let mut mases = Vec::with_capacity(heldout.len());
    let mut passes = 0;
    for ts in heldout {
        let s = ts.season_period.unwrap_or(default_season);
        if ts.len() <= h + s {
            return Err(Error::Data(format!("held-out series {} is too short for horizon {h}", ts.id)));
        }
        let split = ts.len() - h;
        let context = ts.slice(0, split);
        let actual = &ts.values[split..];
        let (f, p) = variant_forecast(variant, &context, h, params)?;
        passes = p;
        wqls.push(wql(f.values.view(), actual, &f.quantile_levels).ok());
        mases.push(mase(&f.median(), actual, &context.values, s).ok());
    }
    let defined = |v: &[Option<f64>]| v.iter().flatten().copied().collect::<Vec<_>>();
    Ok(HorizonScores {
        patches,
        horizon: h,
        median_wql: median(&defined(&wqls)),
        median_mase: median(&defined(&mases)),
        wql: wqls,
        mase: mases,
        passes,
    })
}

/// Trains one variant from the shared initialization and scores it.
pub fn run_variant(
    variant: Variant,
    spec: &AblationSpec,
    model: &ModelConfig,
    base: &TrainConfig,
    corpus: &Corpus,
    heldout: &[TimeSeries],
) -> Result<(VariantResult, ModelParams, Vec<LossRecord>)> {
    spec.validate()?;
    let cfg = variant.train_config(base, spec.long_patches);
    let init = ModelParams::init(model, &mut rng::seeded(spec.init_seed))?;
    info!("ablation: training {} for {} steps", variant.name(), cfg.steps);
    let out = train(corpus, &cfg, init)?;
    let default_season = model.m_out;
    let short = score_heldout(variant, &out.params, heldout, spec.short_patches, default_season)?;
    let long = score_heldout(variant, &out.params, heldout, spec.long_patches, default_season)?;
    let final_loss = out.trace.last().map_or(f64::NAN, |r| r.loss);
    let result = VariantResult {
        variant,
        seed: cfg.seed,
        train_steps: cfg.steps,
        parameter_count: out.params.parameter_count(),
        n_series: heldout.len(),
        short,
        long,
        final_loss,
    };
    Ok((result, out.params, out.trace))
}

/// One-sided paired sign test that `a` tends to be smaller than `b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    /// Pairs with `a < b`.
    pub wins: usize,
    /// Pairs with `a > b`.
    pub losses: usize,
    /// `P[Binomial(wins + losses, 1/2) >= wins]`.
    pub p_value: f64,
}

pub fn sign_test(a: &[Option<f64>], b: &[Option<f64>]) -> SignTest {
    let (mut wins, mut losses) = (0usize, 0usize);
    for (x, y) in a.iter().zip(b) {
        if let (Some(x), Some(y)) = (x, y) {
            if x < y {
                wins += 1;
            } else if x > y {
                losses += 1;
            }
        }
    }
    SignTest {
        wins,
        losses,
        p_value: binomial_upper_tail(wins + losses, wins),
    }
}

/// `P[X >= k]` for `X ~ Binomial(n, 1/2)`.
pub fn binomial_upper_tail(n: usize, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    // pmf(i) = C(n, i) / 2^n, accumulated in log space
    let ln2n = n as f64 * std::f64::consts::LN_2;
    let mut ln_c = 0.0; // ln C(n, 0)
    let mut total = 0.0;
    for i in 0..=n {
        if i > 0 {
            ln_c += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        if i >= k {
            total += (ln_c - ln2n).exp();
        }
    }
    total.min(1.0)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationReport {
    pub results: Vec<VariantResult>,
    /// Long-horizon sign test of each variant against `cpm` (cpm as `a`).
    pub comparisons: Vec<(Variant, SignTest)>,
}

impl AblationReport {
    pub fn new(results: Vec<VariantResult>) -> Self {
        let cpm = results.iter().find(|r| r.variant == Variant::Cpm);
        let comparisons = match cpm {
            Some(c) => results
                .iter()
                .filter(|r| r.variant != Variant::Cpm)
                .map(|r| (r.variant, sign_test(&c.long.wql, &r.long.wql)))
                .collect(),
            None => {
                warn!("ablation: no cpm variant, skipping sign tests");
                Vec::new()
            }
        };
        Self { results, comparisons }
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "| variant | seed | steps | params | series | short WQL | short MASE | long WQL | long MASE | passes (long) |"
        );
        let _ = writeln!(out, "|---|---|---|---|---|---|---|---|---|---|");
        for r in &self.results {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {} |",
                r.variant.name(),
                r.seed,
                r.train_steps,
                r.parameter_count,
                r.n_series,
                r.short.median_wql,
                r.short.median_mase,
                r.long.median_wql,
                r.long.median_mase,
                r.long.passes
            );
        }
        if !self.comparisons.is_empty() {
            let _ = writeln!(out, "\nLong-horizon paired sign tests (cpm better than variant):\n");
            let _ = writeln!(out, "| variant | cpm wins | cpm losses | p |");
            let _ = writeln!(out, "|---|---|---|---|");
            for (v, t) in &self.comparisons {
                let _ = writeln!(out, "| {} | {} | {} | {:.3e} |", v.name(), t.wins, t.losses, t.p_value);
            }
        }
        out
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record([
            "variant", "seed", "steps", "params", "series", "short_wql", "short_mase", "long_wql", "long_mase", "long_passes",
        ])?;
        for r in &self.results {
            w.write_record([
                r.variant.name().to_string(),
                r.seed.to_string(),
                r.train_steps.to_string(),
                r.parameter_count.to_string(),
                r.n_series.to_string(),
                r.short.median_wql.to_string(),
                r.short.median_mase.to_string(),
                r.long.median_wql.to_string(),
                r.long.median_mase.to_string(),
                r.long.passes.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
