// SPDX-License-Identifier: MIT OR Apache-2.0

//! Unified TOML configuration for the command-line tool. Every section is
//! optional and falls back to its defaults; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ablation::AblationSpec;
use crate::error::{Error, Result};
use crate::eval::EvalSetting;
use crate::model::ModelConfig;
use crate::synth::{GeneratorConfig, MixupSpec};
use crate::train::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// JSON-lines corpus files used for training.
    pub corpus: Vec<PathBuf>,
    /// Sampling weight per corpus file; empty means equal weights.
    pub weights: Vec<f64>,
    pub generator: GeneratorConfig,
    /// Mixup series appended by `generate`.
    pub mixup_count: usize,
    pub mixup: MixupSpec,
    /// Held-out family for ablations.
    pub heldout: Option<GeneratorConfig>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub settings: Vec<EvalSetting>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub ablation: AblationSpec,
}

/// Every accepted key with a one-line description, for `--help`.
pub const CONFIG_KEYS: &str = "\
CONFIG KEYS (TOML; every section and key is optional)
  [data]
    corpus = [paths]         JSON-lines training corpora
    weights = [f64]          per-corpus sampling weights (default: equal)
    mixup_count = int        mixup series appended by `generate` (default 0)
  [data.generator]           synthetic GP corpus
    family = \"kernel_synth\" | \"noisy_locally_periodic\"
    count, min_length, max_length, max_kernels, noise_std, periods = [int],
    envelope_periods = [lo, hi] (RBF envelope scale in periods), seed
  [data.mixup]
    k_max, l_min, l_max, alpha
  [data.heldout]             held-out family for `ablate` (same keys as data.generator)
  [model]
    m_in, m_out, d, d_ff, n_heads, n_blocks, quantiles = [f64]
  [train]
    steps, batch_size, peak_lr, min_lr, weight_decay, warmup_ratio, context_len,
    seed, grad_clip (0 = off), log_every,
    masking = \"cpm\" | \"tail\" | \"none\", tail_patches
  [train.cpm]
    c_max, p_max
  [train.augment]
    p_amplitude, p_censor, p_spike, max_changepoints
  [[eval.settings]]
    name, dataset (path), horizon, season_period, windows (default 1)
  [ablation]
    variants = [\"cpm\", \"naive_multipatch\", \"no_multipatch_autoregressive\",
                \"no_augment\", \"no_censor\", \"no_spike\", \"no_amplitude\"]
    short_patches, long_patches, init_seed
";

fn check_files<'a>(paths: impl Iterator<Item = &'a Path>) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            return Err(Error::Data(format!("input file {} does not exist", p.display())));
        }
    }
    Ok(())
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(before.len(), |p| before.len() - p - 1) + 1;
    (line, col)
}

impl CliConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: CliConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().trim().to_string();
            match e.span() {
                Some(span) => {
                    let (line, col) = line_col(text, span.start);
                    Error::Config(format!("{origin}:{line}:{col}: {msg}"))
                }
                None => Error::Config(format!("{origin}: {msg}")),
            }
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.data.generator.validate()?;
        if let Some(h) = &self.data.heldout {
            h.validate()?;
        }
        for s in &self.eval.settings {
            s.validate()?;
        }
        self.ablation.validate()?;
        if !self.data.weights.is_empty() && self.data.weights.len() != self.data.corpus.len() {
            return Err(Error::Config(format!(
                "data.weights has {} entries for {} corpus files",
                self.data.weights.len(),
                self.data.corpus.len()
            )));
        }
        Ok(())
    }

    /// Checks that every `data.corpus` file exists.
    pub fn validate_corpus_inputs(&self) -> Result<()> {
        check_files(self.data.corpus.iter().map(PathBuf::as_path))
    }

    /// Checks that every evaluation dataset exists.
    pub fn validate_eval_inputs(&self) -> Result<()> {
        check_files(self.eval.settings.iter().map(|s| Path::new(&s.dataset)))
    }

    /// Sampling weights aligned with `data.corpus`.
    pub fn corpus_weights(&self) -> Vec<f64> {
        if self.data.weights.is_empty() {
            vec![1.0; self.data.corpus.len()]
        } else {
            self.data.weights.clone()
        }
    }
}
