// SPDX-License-Identifier: MIT OR Apache-2.0

//! Subcommand implementations behind the `patchrex` binary.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::ablation::{run_variant, AblationReport};
use crate::checkpoint::{load_state, load_weights, save_state, save_weights};
use crate::config::CliConfig;
use crate::dataset::{read_jsonl, write_jsonl};
use crate::error::{Error, Result};
use crate::eval::{aggregate, evaluate_setting, EvalReport, Forecaster, ModelForecaster, SeasonalNaive};
use crate::model::{forecast, ModelParams};
use crate::rng;
use crate::series::TimeSeries;
use crate::synth::{generate_corpus, tsmixup, GeneratorConfig};
use crate::train::{write_loss_trace_to, Corpus, LossRecord, Trainer};

/// RNG stream reserved for parameter initialization.
const INIT_STREAM: u64 = u64::MAX;
const MIXUP_STREAM: u64 = u64::MAX - 1;

/// Loss trace written next to a checkpoint.
pub fn loss_trace_path(ckpt: &Path) -> PathBuf {
    with_suffix(ckpt, "loss.csv")
}

/// Exact-resume training state written next to a checkpoint.
pub fn state_path(ckpt: &Path) -> PathBuf {
    with_suffix(ckpt, "state")
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

/// Generates the synthetic corpus (plus optional mixups) and writes it as
/// JSON lines. Returns the number of series written.
pub fn cmd_generate(cfg: &CliConfig, out: &Path) -> Result<usize> {
    cfg.validate()?;
    if cfg.data.mixup_count > 0 {
        cfg.validate_corpus_inputs()?;
    }
    let gen = &cfg.data.generator;
    let mut series = generate_corpus(gen)?;
    if cfg.data.mixup_count > 0 {
        let mut base = series.clone();
        for p in &cfg.data.corpus {
            base.extend(read_jsonl(p)?);
        }
        let mut r = rng::derived(gen.seed, MIXUP_STREAM);
        for i in 0..cfg.data.mixup_count {
            let mut s = tsmixup(&base, &cfg.data.mixup, &mut r)?;
            s.id = format!("mixup-{}-{i}", gen.seed);
            series.push(s);
        }
    }
    if series.is_empty() {
        warn!("generator produced no series; writing an empty corpus");
    }
    write_jsonl(out, &series)?;
    info!("wrote {} series (seed {}) to {}", series.len(), gen.seed, out.display());
    Ok(series.len())
}

pub fn load_corpus(paths: &[PathBuf], weights: Vec<f64>) -> Result<Corpus> {
    if paths.is_empty() {
        return Err(Error::Data("no training corpus given (data.corpus or --corpus)".into()));
    }
    let sources = paths.iter().map(read_jsonl).collect::<Result<Vec<_>>>()?;
    Ok(Corpus { sources, weights })
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Continue from the state file written next to the checkpoint.
    pub resume: bool,
    /// Stop after this step (the run can be resumed later).
    pub stop_after: Option<usize>,
}

/// Trains from scratch or resumes; writes the checkpoint, loss trace and
/// resume state next to `out`.
pub fn cmd_train(cfg: &CliConfig, corpus: &Corpus, out: &Path, opts: &TrainOptions) -> Result<ModelParams> {
    cfg.validate()?;
    let tc = &cfg.train;
    let state_file = state_path(out);
    let mut trainer = if opts.resume {
        let (params, state) = load_state(&state_file, tc.seed, tc.weight_decay)?;
        if params.config != cfg.model {
            return Err(Error::Checkpoint(format!(
                "{}: model config differs from the [model] section",
                state_file.display()
            )));
        }
        info!("resuming from step {}", state.step);
        Trainer::resume(params, state, corpus, tc)?
    } else {
        let params = ModelParams::init(&cfg.model, &mut rng::derived(tc.seed, INIT_STREAM))?;
        Trainer::new(params, corpus, tc)?
    };
    info!(
        "training {} parameters on {} series for {} steps",
        trainer.params().parameter_count(),
        corpus.len(),
        tc.steps
    );
    let mut trace: Vec<LossRecord> = Vec::new();
    let stop = opts.stop_after.unwrap_or(tc.steps);
    trainer.run_until(stop, &mut trace)?;

    let (params, state) = trainer.into_parts();
    save_weights(out, &params)?;
    save_state(&state_file, &params, &state, tc.seed)?;
    let trace_file = loss_trace_path(out);
    if opts.resume && trace_file.exists() {
        let f = OpenOptions::new().append(true).open(&trace_file)?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(f);
        for r in &trace {
            w.serialize(r)?;
        }
        w.flush()?;
    } else {
        write_loss_trace_to(File::create(&trace_file)?, &trace)?;
    }
    info!("wrote {} (step {})", out.display(), state.step);
    Ok(params)
}

/// One line of `forecast` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub id: String,
    pub horizon: usize,
    pub quantile_levels: Vec<f64>,
    /// `horizon` rows of `|Q|` values, nondecreasing within each row.
    pub quantiles: Vec<Vec<f64>>,
}

/// Fails when a model section was given explicitly and differs from the
/// checkpoint's configuration.
pub fn check_model_config(params: &ModelParams, cfg: Option<&CliConfig>) -> Result<()> {
    if let Some(c) = cfg {
        if c.model != params.config {
            return Err(Error::Checkpoint(format!(
                "checkpoint config {:?} does not match the [model] section {:?}",
                params.config, c.model
            )));
        }
    }
    Ok(())
}

pub fn cmd_forecast(ckpt: &Path, series_file: &Path, horizon: Option<usize>, out: &Path, csv_out: Option<&Path>, model_cfg: Option<&CliConfig>) -> Result<Vec<ForecastRecord>> {
    let params = load_weights(ckpt)?;
    check_model_config(&params, model_cfg)?;
    let h = horizon.unwrap_or(params.config.m_out);
    let series = read_jsonl(series_file)?;
    let records = series
        .iter()
        .map(|s| {
            let f = forecast(s, h, &params).map_err(|e| Error::Data(format!("series {}: {e}", s.id)))?;
            Ok(ForecastRecord {
                id: s.id.clone(),
                horizon: h,
                quantile_levels: f.quantile_levels.clone(),
                quantiles: f.values.outer_iter().map(|r| r.to_vec()).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut w = BufWriter::new(File::create(out)?);
    for r in &records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    w.flush()?;
    if let Some(p) = csv_out {
        let mut w = csv::Writer::from_path(p)?;
        let mut header = vec!["id".to_string(), "step".to_string()];
        header.extend(params.config.quantiles.iter().map(|q| format!("q{q}")));
        w.write_record(&header)?;
        for r in &records {
            for (t, row) in r.quantiles.iter().enumerate() {
                let mut rec = vec![r.id.clone(), (t + 1).to_string()];
                rec.extend(row.iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
    }
    info!("wrote {} forecasts (h={h}) to {}", records.len(), out.display());
    Ok(records)
}

/// Scores the checkpoint and the seasonal-naive baseline on every configured
/// setting; writes `report.csv` and `report.json` into `out_dir`.
pub fn cmd_evaluate(ckpt: &Path, cfg: &CliConfig, out_dir: &Path) -> Result<EvalReport> {
    for s in &cfg.eval.settings {
        s.validate()?;
    }
    cfg.validate_eval_inputs()?;
    if cfg.eval.settings.is_empty() {
        return Err(Error::Config("no [[eval.settings]] configured".into()));
    }
    let params = load_weights(ckpt)?;
    let name = ckpt.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
    let model = ModelForecaster { name, params: &params };
    let mut rows = Vec::new();
    for setting in &cfg.eval.settings {
        let series = read_jsonl(&setting.dataset)?;
        let naive = SeasonalNaive {
            season_period: setting.season_period,
            quantiles: params.config.quantiles.clone(),
        };
        let models: [&dyn Forecaster; 2] = [&naive, &model];
        for m in models {
            rows.push(evaluate_setting(m, &series, setting)?);
        }
    }
    let report = aggregate(&rows, "seasonal_naive")?;
    fs::create_dir_all(out_dir)?;
    report.write_files(&out_dir.join("report.csv"), &out_dir.join("report.json"))?;
    info!("wrote evaluation report to {}", out_dir.display());
    Ok(report)
}

/// Trains every configured variant on the shared corpus and writes
/// `ablation.md`, `ablation.csv` and `ablation.json` into `out_dir`.
pub fn cmd_ablate(cfg: &CliConfig, out_dir: &Path) -> Result<AblationReport> {
    cfg.validate()?;
    cfg.validate_corpus_inputs()?;
    let corpus = if cfg.data.corpus.is_empty() {
        Corpus::single(generate_corpus(&cfg.data.generator)?)
    } else {
        load_corpus(&cfg.data.corpus, cfg.corpus_weights())?
    };
    let heldout_cfg = cfg.data.heldout.clone().unwrap_or_else(|| GeneratorConfig {
        seed: cfg.data.generator.seed.wrapping_add(1),
        count: 20,
        ..cfg.data.generator.clone()
    });
    let heldout: Vec<TimeSeries> = generate_corpus(&heldout_cfg)?;
    let mut results = Vec::new();
    for &v in &cfg.ablation.variants {
        let (r, _, _) = run_variant(v, &cfg.ablation, &cfg.model, &cfg.train, &corpus, &heldout)?;
        info!("{}: long-horizon median WQL {:.4}", v.name(), r.long.median_wql);
        results.push(r);
    }
    let report = AblationReport::new(results);
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("ablation.md"), report.to_markdown())?;
    report.write_csv(File::create(out_dir.join("ablation.csv"))?)?;
    let mut f = File::create(out_dir.join("ablation.json"))?;
    serde_json::to_writer_pretty(&mut f, &report)?;
    writeln!(f)?;
    Ok(report)
}
