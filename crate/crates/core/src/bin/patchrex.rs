// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use patchrex::cli::{self, TrainOptions};
use patchrex::config::{CliConfig, CONFIG_KEYS};
use patchrex::error::{Error, Result};

/// Patch-based sLSTM quantile forecaster.
#[derive(Parser, Debug)]
#[command(name = "patchrex", version, about, after_long_help = CONFIG_KEYS)]
struct Args {
    /// TOML config file (see CONFIG KEYS below; all keys optional).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the config (generator, training, init).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data assembly (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic JSON-lines corpus.
    Generate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes the checkpoint, `<out>.loss.csv` and `<out>.state`.
    Train {
        /// Corpus files (override data.corpus).
        #[arg(long, num_args = 1..)]
        corpus: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from `<out>.state`.
        #[arg(long)]
        resume: bool,
        /// Stop after this step; resume later with --resume.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Forecast every series of a JSON-lines file.
    Forecast {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        series: PathBuf,
        /// Forecast horizon (default: one output patch).
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Also write a long-format CSV for plotting.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Score a checkpoint and the seasonal-naive baseline on [[eval.settings]].
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory for report.csv and report.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the configured ablation variants.
    Ablate {
        /// Output directory for ablation.md/.csv/.json.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<CliConfig> {
    let mut cfg = match path {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    if let Some(s) = seed {
        cfg.data.generator.seed = s;
        cfg.train.seed = s;
        cfg.ablation.init_seed = s;
        if let Some(h) = cfg.data.heldout.as_mut() {
            h.seed = s.wrapping_add(1);
        }
    }
    Ok(cfg)
}

/// Whether the config file sets a `[model]` section explicitly.
fn has_model_section(path: &Path) -> Result<bool> {
    let text = std::fs::read_to_string(path)?;
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    Ok(table.contains_key("model"))
}

fn run(args: Args) -> Result<()> {
    if let Some(n) = args.workers {
        if n == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let cfg = load_config(args.config.as_deref(), args.seed)?;
    match args.command {
        Command::Generate { out } => {
            let n = cli::cmd_generate(&cfg, &out)?;
            println!("generated {n} series with seed {} -> {}", cfg.data.generator.seed, out.display());
        }
        Command::Train {
            corpus,
            out,
            resume,
            stop_after,
        } => {
            cfg.validate()?;
            let (paths, weights) = if corpus.is_empty() {
                cfg.validate_corpus_inputs()?;
                (cfg.data.corpus.clone(), cfg.corpus_weights())
            } else {
                let w = vec![1.0; corpus.len()];
                (corpus, w)
            };
            for p in &paths {
                if !p.is_file() {
                    return Err(Error::Data(format!("corpus file {} does not exist", p.display())));
                }
            }
            let data = cli::load_corpus(&paths, weights)?;
            cli::cmd_train(&cfg, &data, &out, &TrainOptions { resume, stop_after })?;
            println!("checkpoint -> {}", out.display());
        }
        Command::Forecast {
            checkpoint,
            series,
            horizon,
            out,
            csv,
        } => {
            let explicit = match &args.config {
                Some(p) if has_model_section(p)? => Some(&cfg),
                _ => None,
            };
            let recs = cli::cmd_forecast(&checkpoint, &series, horizon, &out, csv.as_deref(), explicit)?;
            println!("{} forecasts -> {}", recs.len(), out.display());
        }
        Command::Evaluate { checkpoint, out } => {
            let report = cli::cmd_evaluate(&checkpoint, &cfg, &out)?;
            for s in &report.summary {
                println!(
                    "{:<24} gmean MASE {:.4}  gmean WQL {:.4}  avg rank {:.2}",
                    s.model, s.gmean_mase, s.gmean_wql, s.average_rank
                );
            }
        }
        Command::Ablate { out } => {
            let report = cli::cmd_ablate(&cfg, &out)?;
            print!("{}", report.to_markdown());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PATCHREX_LOG", "info")).init();
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
