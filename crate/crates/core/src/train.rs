// SPDX-License-Identifier: MIT OR Apache-2.0

//! Learning-rate schedule, AdamW and the training loop.
//!
//! Every batch slot draws from its own RNG stream keyed by `(seed, step,
//! slot)`, so a run is reproducible regardless of the worker count and can be
//! resumed from any step given the optimizer state.

use std::io::Write;
use std::path::Path;

use log::{debug, info};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_training_augmentations, AugmentConfig};
use crate::cpm::{build_cpm_mask, sample_cpm_params, tail_mask, CpmConfig};
use crate::error::{Error, Result};
use crate::model::{decays, reduce_sample_grads, sample_loss_and_grad, ModelParams};
use crate::rng;
use crate::series::{patchify_masked, PatchBatch, TimeSeries};

/// How the model input is masked during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskingMode {
    /// Contiguous patch masking with randomly drawn run length and rate.
    Cpm,
    /// Always hide the final `tail_patches` patches.
    Tail,
    /// Plain next-patch training.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    /// Training window length; must be a multiple of the patch size.
    pub context_len: usize,
    pub seed: u64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Log the loss every this many steps (0 = never).
    pub log_every: usize,
    pub masking: MaskingMode,
    /// Patches hidden by [`MaskingMode::Tail`].
    pub tail_patches: usize,
    pub cpm: CpmConfig,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500_000,
            batch_size: 256,
            peak_lr: 1e-3,
            min_lr: 1e-4,
            weight_decay: 0.01,
            warmup_ratio: 0.05,
            context_len: 2048,
            seed: 0,
            grad_clip: 1.0,
            log_every: 100,
            masking: MaskingMode::Cpm,
            tail_patches: 4,
            cpm: CpmConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.steps == 0 || self.batch_size == 0 || self.context_len == 0 {
            return bad("train.steps, train.batch_size and train.context_len must be positive".into());
        }
        if !(self.min_lr > 0.0 && self.min_lr <= self.peak_lr) {
            return bad(format!(
                "train: need 0 < min_lr <= peak_lr, got min_lr={} peak_lr={}",
                self.min_lr, self.peak_lr
            ));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return bad(format!("train.warmup_ratio must lie in [0, 1), got {}", self.warmup_ratio));
        }
        if !(self.weight_decay >= 0.0) || !(self.grad_clip >= 0.0) {
            return bad("train.weight_decay and train.grad_clip must be >= 0".into());
        }
        if self.masking == MaskingMode::Tail && self.tail_patches == 0 {
            return bad("train.tail_patches must be >= 1 for tail masking".into());
        }
        self.cpm.validate()?;
        self.augment.validate()
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup_ratio * self.steps as f64).ceil() as usize
    }
}

/// Linear warmup from 0 to `peak_lr`, then cosine decay to `min_lr` at
/// `cfg.steps`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    let warmup = cfg.warmup_steps();
    if step < warmup {
        return cfg.peak_lr * step as f64 / warmup as f64;
    }
    let span = cfg.steps.saturating_sub(warmup);
    if span == 0 {
        return cfg.min_lr;
    }
    let progress = ((step - warmup) as f64 / span as f64).min(1.0);
    cfg.min_lr + 0.5 * (cfg.peak_lr - cfg.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// AdamW with decoupled weight decay on matrices only.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Updates applied so far.
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamW {
    pub fn new(n_params: usize, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) -> Result<()> {
        let g = grads.to_flat();
        if g.len() != self.m.len() {
            return Err(Error::DimensionMismatch(format!(
                "optimizer holds {} moments, gradient has {} entries",
                self.m.len(),
                g.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut pos = 0;
        params.visit_mut(&mut |name, p| {
            let decay = wd > 0.0 && decays(name);
            for x in p.iter_mut() {
                let gi = g[pos];
                if decay {
                    *x -= lr * wd * *x;
                }
                m[pos] = b1 * m[pos] + (1.0 - b1) * gi;
                v[pos] = b2 * v[pos] + (1.0 - b2) * gi * gi;
                let mhat = m[pos] / bc1;
                let vhat = v[pos] / bc2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
                pos += 1;
            }
        });
        Ok(())
    }
}

/// Training data: one or more sources sampled by weight, series uniform
/// within a source.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub sources: Vec<Vec<TimeSeries>>,
    pub weights: Vec<f64>,
}

impl Corpus {
    pub fn single(series: Vec<TimeSeries>) -> Self {
        Self {
            sources: vec![series],
            weights: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.sources.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        if self.sources.len() != self.weights.len() {
            return Err(Error::Config(format!(
                "{} corpus sources but {} weights",
                self.sources.len(),
                self.weights.len()
            )));
        }
        if self.is_empty() {
            return Err(Error::Data("training corpus is empty".into()));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0))
            || !self.sources.iter().zip(&self.weights).any(|(s, &w)| !s.is_empty() && w > 0.0)
        {
            return Err(Error::Config("corpus weights must be >= 0 with a non-empty positive source".into()));
        }
        Ok(())
    }

    fn sample<'a>(&'a self, rng: &mut impl Rng) -> &'a TimeSeries {
        let w: Vec<f64> = self
            .sources
            .iter()
            .zip(&self.weights)
            .map(|(s, &w)| if s.is_empty() { 0.0 } else { w })
            .collect();
        let src = &self.sources[WeightedIndex::new(&w).expect("validated weights").sample(rng)];
        &src[rng.gen_range(0..src.len())]
    }
}

/// Random window of `len` steps, or the whole series left-padded with
/// unobserved steps when shorter.
pub fn crop_or_pad(series: &TimeSeries, len: usize, rng: &mut impl Rng) -> TimeSeries {
    if series.len() > len {
        let start = rng.gen_range(0..=series.len() - len);
        series.slice(start, start + len)
    } else {
        series.left_pad(len - series.len())
    }
}

/// Input mask for one training sample; `true` hides the step.
pub fn training_mask(t: usize, m: usize, cfg: &TrainConfig, rng: &mut impl Rng) -> Vec<bool> {
    match cfg.masking {
        MaskingMode::Cpm => {
            let p = sample_cpm_params(rng, cfg.cpm.c_max, cfg.cpm.p_max);
            build_cpm_mask(t, m, &p, rng)
        }
        MaskingMode::Tail => tail_mask(t, m, cfg.tail_patches),
        MaskingMode::None => vec![false; t],
    }
}

/// Builds the sample for batch slot `slot` of `step`. `None` when the window
/// holds no observed value.
pub fn assemble_sample(corpus: &Corpus, cfg: &TrainConfig, m: usize, step: usize, slot: usize) -> Result<Option<PatchBatch>> {
    let mut rng = rng::for_slot(cfg.seed, step, slot);
    let window = crop_or_pad(corpus.sample(&mut rng), cfg.context_len, &mut rng);
    let (augmented, _) = apply_training_augmentations(&window, &cfg.augment, &mut rng);
    let mask = training_mask(augmented.len(), m, cfg, &mut rng);
    match patchify_masked(&augmented, &mask, m, m) {
        Ok(b) => Ok(Some(b)),
        Err(Error::NoObservedValues) => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

pub fn write_loss_trace(path: &Path, trace: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in trace {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_loss_trace_to(w: impl Write, trace: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for r in trace {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Optimizer state needed to continue a run exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Last completed step.
    pub step: usize,
    pub optimizer: AdamW,
}

/// Stateful training loop over steps `1..=cfg.steps`.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    corpus: &'a Corpus,
    params: ModelParams,
    state: TrainState,
}

impl<'a> Trainer<'a> {
    pub fn new(params: ModelParams, corpus: &'a Corpus, cfg: &TrainConfig) -> Result<Self> {
        let optimizer = AdamW::new(params.parameter_count(), cfg.weight_decay);
        Self::resume(params, TrainState { step: 0, optimizer }, corpus, cfg)
    }

    pub fn resume(params: ModelParams, state: TrainState, corpus: &'a Corpus, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        corpus.validate()?;
        let m = params.config.m_in;
        if cfg.context_len % m != 0 {
            return Err(Error::Config(format!(
                "train.context_len ({}) must be a multiple of the patch size ({m})",
                cfg.context_len
            )));
        }
        if state.optimizer.m.len() != params.parameter_count() {
            return Err(Error::Checkpoint("optimizer state does not match the model size".into()));
        }
        if state.step > cfg.steps {
            return Err(Error::Config(format!(
                "resume step {} is beyond train.steps {}",
                state.step, cfg.steps
            )));
        }
        Ok(Self {
            cfg: cfg.clone(),
            corpus,
            params,
            state,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.cfg.steps
    }

    pub fn into_parts(self) -> (ModelParams, TrainState) {
        (self.params, self.state)
    }

    /// Runs one optimizer step and returns its record.
    pub fn step(&mut self) -> Result<LossRecord> {
        let step = self.state.step + 1;
        let m = self.params.config.m_in;
        let lr = lr_at(step, &self.cfg);
        let (cfg, corpus, params) = (&self.cfg, self.corpus, &self.params);
        let per_sample = (0..cfg.batch_size)
            .into_par_iter()
            .map(|slot| match assemble_sample(corpus, cfg, m, step, slot)? {
                Some(b) => sample_loss_and_grad(params, &b),
                None => Ok((None, params.zeros_like())),
            })
            .collect::<Result<Vec<_>>>()?;
        let (loss, mut grads) = reduce_sample_grads(params, per_sample);
        let grad_norm = grads.global_norm();
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(Error::NumericalAbort {
                step,
                lr,
                grad_norm,
                loss,
            });
        }
        if cfg.grad_clip > 0.0 && grad_norm > cfg.grad_clip {
            grads.scale(cfg.grad_clip / grad_norm);
        }
        self.state.optimizer.step(&mut self.params, &grads, lr)?;
        self.state.step = step;
        if self.cfg.log_every > 0 && step % self.cfg.log_every == 0 {
            info!("step {step:>7}  lr {lr:.3e}  loss {loss:.5}  |g| {grad_norm:.3e}");
        } else {
            debug!("step {step} lr {lr:.3e} loss {loss:.6} |g| {grad_norm:.3e}");
        }
        Ok(LossRecord { step, lr, loss })
    }

    /// Steps until `stop` (capped at `cfg.steps`), appending to `trace`.
    pub fn run_until(&mut self, stop: usize, trace: &mut Vec<LossRecord>) -> Result<()> {
        while self.state.step < stop.min(self.cfg.steps) {
            trace.push(self.step()?);
        }
        Ok(())
    }
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub state: TrainState,
    pub trace: Vec<LossRecord>,
}

/// Trains `params` for `cfg.steps` steps.
pub fn train(corpus: &Corpus, cfg: &TrainConfig, params: ModelParams) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(params, corpus, cfg)?;
    let mut trace = Vec::with_capacity(cfg.steps);
    trainer.run_until(cfg.steps, &mut trace)?;
    let (params, state) = trainer.into_parts();
    Ok(TrainOutcome { params, state, trace })
}
