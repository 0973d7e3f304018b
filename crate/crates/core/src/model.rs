// SPDX-License-Identifier: MIT OR Apache-2.0

//! The full forecaster: shared input residual block, sLSTM backbone, quantile
//! output head, masked quantile loss and single-pass multi-patch inference.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::pinball;
use crate::nn::block::{fill_fan_in, slice_mut1, slice_mut2};
use crate::nn::ops::{gelu, gelu_grad, linear, linear_backward, outer_accumulate};
use crate::nn::{backbone_backward, backbone_forward_cached, BackboneCache, BlockParams, TensorRef};
use crate::series::{denormalize, patchify_normalized, zscore_normalize, PatchBatch, TimeSeries};

/// Maximum number of context patches seen by the model.
pub const MAX_CONTEXT_PATCHES: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub m_in: usize,
    pub m_out: usize,
    pub d: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub quantiles: Vec<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            m_in: 32,
            m_out: 32,
            d: 512,
            d_ff: 2048,
            n_heads: 4,
            n_blocks: 12,
            quantiles: default_quantiles(),
        }
    }
}

/// `{0.1, 0.2, ..., 0.9}`
pub fn default_quantiles() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.m_in == 0 || self.m_out == 0 {
            return bad("patch sizes must be positive".into());
        }
        if self.m_in != self.m_out {
            return bad(format!("m_in ({}) must equal m_out ({})", self.m_in, self.m_out));
        }
        if self.d == 0 || self.d_ff == 0 || self.n_blocks == 0 {
            return bad("d, d_ff and n_blocks must be positive".into());
        }
        if self.n_heads == 0 || self.d % self.n_heads != 0 {
            return bad(format!("d ({}) must be divisible by n_heads ({})", self.d, self.n_heads));
        }
        if self.quantiles.is_empty() {
            return bad("quantile list is empty".into());
        }
        if self.quantiles.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
            return bad("quantile levels must lie in (0, 1)".into());
        }
        if self.quantiles.windows(2).any(|w| w[0] >= w[1]) {
            return bad("quantile levels must be strictly increasing".into());
        }
        Ok(())
    }

    pub fn n_quantiles(&self) -> usize {
        self.quantiles.len()
    }

    pub fn max_context(&self) -> usize {
        MAX_CONTEXT_PATCHES * self.m_in
    }

    /// Index of the median level, or the middle level when 0.5 is absent.
    pub fn median_index(&self) -> usize {
        self.quantiles
            .iter()
            .position(|&q| (q - 0.5).abs() < 1e-12)
            .unwrap_or(self.quantiles.len() / 2)
    }
}

/// Two-layer residual block `W_out·gelu(W_in·u + b_in) + b_out + W_skip·u`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlockParams {
    pub w_in: Array2<f64>,
    pub b_in: Array1<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
    pub w_skip: Array2<f64>,
}

impl ResidualBlockParams {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            w_in: Array2::zeros((hidden, input)),
            b_in: Array1::zeros(hidden),
            w_out: Array2::zeros((output, hidden)),
            b_out: Array1::zeros(output),
            w_skip: Array2::zeros((output, input)),
        }
    }

    pub fn init(input: usize, hidden: usize, output: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(input, hidden, output);
        fill_fan_in(&mut p.w_in, rng);
        fill_fan_in(&mut p.w_out, rng);
        fill_fan_in(&mut p.w_skip, rng);
        p
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, TensorRef<'a>)) {
        f(format!("{prefix}.w_in"), TensorRef::Matrix(&self.w_in));
        f(format!("{prefix}.b_in"), TensorRef::Vector(&self.b_in));
        f(format!("{prefix}.w_out"), TensorRef::Matrix(&self.w_out));
        f(format!("{prefix}.b_out"), TensorRef::Vector(&self.b_out));
        f(format!("{prefix}.w_skip"), TensorRef::Matrix(&self.w_skip));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64])) {
        f(format!("{prefix}.w_in"), slice_mut2(&mut self.w_in));
        f(format!("{prefix}.b_in"), slice_mut1(&mut self.b_in));
        f(format!("{prefix}.w_out"), slice_mut2(&mut self.w_out));
        f(format!("{prefix}.b_out"), slice_mut1(&mut self.b_out));
        f(format!("{prefix}.w_skip"), slice_mut2(&mut self.w_skip));
    }
}

struct ResidualCache {
    pre: Array2<f64>,
    act: Array2<f64>,
}

fn residual_forward(u: ArrayView2<f64>, p: &ResidualBlockParams) -> (Array2<f64>, ResidualCache) {
    let pre = linear(u, &p.w_in, Some(&p.b_in));
    let act = pre.mapv(gelu);
    let mut y = linear(act.view(), &p.w_out, Some(&p.b_out));
    y += &linear(u, &p.w_skip, None);
    (y, ResidualCache { pre, act })
}

fn residual_backward(
    u: ArrayView2<f64>,
    cache: &ResidualCache,
    p: &ResidualBlockParams,
    dy: ArrayView2<f64>,
    grads: &mut ResidualBlockParams,
    need_input_grad: bool,
) -> Option<Array2<f64>> {
    let dact = linear_backward(cache.act.view(), &p.w_out, dy, &mut grads.w_out, Some(&mut grads.b_out));
    let dpre = dact * &cache.pre.mapv(gelu_grad);
    if need_input_grad {
        let mut du = linear_backward(u, &p.w_in, dpre.view(), &mut grads.w_in, Some(&mut grads.b_in));
        du += &linear_backward(u, &p.w_skip, dy, &mut grads.w_skip, None);
        Some(du)
    } else {
        outer_accumulate(u, dpre.view(), &mut grads.w_in);
        grads.b_in += &dpre.sum_axis(ndarray::Axis(0));
        outer_accumulate(u, dy, &mut grads.w_skip);
        None
    }
}

/// Applies the input residual block to one token.
pub fn input_residual_block(token: ArrayView1<f64>, p: &ResidualBlockParams) -> Array1<f64> {
    let u = token.insert_axis(ndarray::Axis(0));
    residual_forward(u, p).0.row(0).to_owned()
}

/// Applies the output head to one hidden vector; returns `[m_out, |Q|]`.
pub fn output_residual_block(hidden: ArrayView1<f64>, p: &ResidualBlockParams, m_out: usize) -> Result<Array2<f64>> {
    let u = hidden.insert_axis(ndarray::Axis(0));
    let y = residual_forward(u, p).0;
    let n_q = y.ncols() / m_out;
    if n_q * m_out != y.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "output width {} is not a multiple of m_out {m_out}",
            y.ncols()
        )));
    }
    Ok(y.into_shape_with_order((m_out, n_q)).expect("contiguous"))
}

/// All learnable weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub input: ResidualBlockParams,
    pub blocks: Vec<BlockParams>,
    pub final_norm: Array1<f64>,
    pub output: ResidualBlockParams,
}

/// Whether AdamW applies weight decay to the named tensor.
pub fn decays(name: &str) -> bool {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    leaf.starts_with("w_") || leaf.starts_with("r_")
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = config;
        Ok(Self {
            config: c.clone(),
            input: ResidualBlockParams::zeros(2 * c.m_in, c.d, c.d),
            blocks: (0..c.n_blocks)
                .map(|_| BlockParams::zeros(c.d, c.d_ff, c.n_heads))
                .collect::<Result<_>>()?,
            final_norm: Array1::ones(c.d),
            output: ResidualBlockParams::zeros(c.d, c.d, c.m_out * c.n_quantiles()),
        })
    }

    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let c = config;
        let input = ResidualBlockParams::init(2 * c.m_in, c.d, c.d, rng);
        let blocks = (0..c.n_blocks)
            .map(|_| BlockParams::init(c.d, c.d_ff, c.n_heads, rng))
            .collect::<Result<_>>()?;
        let output = ResidualBlockParams::init(c.d, c.d, c.m_out * c.n_quantiles(), rng);
        Ok(Self {
            config: c.clone(),
            input,
            blocks,
            final_norm: Array1::ones(c.d),
            output,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |_, a| a.fill(0.0));
        z
    }

    /// Every tensor with its hierarchical name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, TensorRef<'_>)> {
        let mut out = Vec::new();
        self.input.visit("input", &mut |n, t| out.push((n, t)));
        for (k, b) in self.blocks.iter().enumerate() {
            b.visit(&mut |n, t| out.push((format!("blocks.{k}.{n}"), t)));
        }
        out.push(("final_norm".into(), TensorRef::Vector(&self.final_norm)));
        self.output.visit("output", &mut |n, t| out.push((n, t)));
        out
    }

    /// Visits every tensor mutably in the order of [`ModelParams::tensors`].
    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.input.visit_mut("input", &mut |n, a| f(&n, a));
        for (k, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&mut |n, a| f(&format!("blocks.{k}.{n}"), a));
        }
        f("final_norm", slice_mut1(&mut self.final_norm));
        self.output.visit_mut("output", &mut |n, a| f(&n, a));
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.data().len()).sum()
    }

    /// Flattened copy of every parameter in [`ModelParams::tensors`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        let flat = other.to_flat();
        let mut pos = 0;
        self.visit_mut(&mut |_, a| {
            for v in a.iter_mut() {
                *v += flat[pos];
                pos += 1;
            }
        });
    }

    pub fn scale(&mut self, factor: f64) {
        self.visit_mut(&mut |_, a| a.iter_mut().for_each(|v| *v *= factor));
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Pinball loss averaged over quantiles and observed target positions;
/// 0 when nothing is observed.
pub fn quantile_loss(pred: ArrayView2<f64>, target: ArrayView1<f64>, target_observed: ArrayView1<bool>, q: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (t, (&y, &obs)) in target.iter().zip(target_observed.iter()).enumerate() {
        if !obs {
            continue;
        }
        count += 1;
        for (j, &level) in q.iter().enumerate() {
            sum += pinball(level, pred[[t, j]], y);
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / (count * q.len()) as f64
    }
}

/// Activations of one sample's forward pass.
pub struct ForwardCache {
    tokens: Array2<f64>,
    input: ResidualCache,
    backbone: BackboneCache,
    hidden: Array2<f64>,
    output: ResidualCache,
}

/// Raw head outputs `[n_tokens, m_out * |Q|]` (row-major `[m_out, |Q|]` per token).
pub fn predict_tokens(params: &ModelParams, tokens: ArrayView2<f64>) -> Result<Array2<f64>> {
    Ok(forward_cached(params, tokens)?.0)
}

pub fn forward_cached(params: &ModelParams, tokens: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
    let c = &params.config;
    if tokens.ncols() != 2 * c.m_in {
        return Err(Error::DimensionMismatch(format!(
            "tokens have width {}, model expects {}",
            tokens.ncols(),
            2 * c.m_in
        )));
    }
    if tokens.nrows() == 0 {
        return Err(Error::InvalidArgument("no tokens".into()));
    }
    let (emb, input) = residual_forward(tokens, &params.input);
    let (hidden, backbone) = backbone_forward_cached(emb.view(), &params.blocks, &params.final_norm)?;
    let (pred, output) = residual_forward(hidden.view(), &params.output);
    Ok((
        pred,
        ForwardCache {
            tokens: tokens.to_owned(),
            input,
            backbone,
            hidden,
            output,
        },
    ))
}

/// Accumulates parameter gradients for `dpred`, the loss gradient w.r.t. the
/// head outputs of one sample.
pub fn backward(params: &ModelParams, cache: &ForwardCache, dpred: ArrayView2<f64>, grads: &mut ModelParams) -> Result<()> {
    if dpred.dim() != (cache.hidden.nrows(), params.output.b_out.len()) {
        return Err(Error::MissingCache("prediction gradient does not match the cached forward pass"));
    }
    let dhidden = residual_backward(cache.hidden.view(), &cache.output, &params.output, dpred, &mut grads.output, true)
        .expect("input gradient requested");
    let demb = backbone_backward(
        &cache.backbone,
        &params.blocks,
        &params.final_norm,
        dhidden.view(),
        &mut grads.blocks,
        &mut grads.final_norm,
    )?;
    residual_backward(cache.tokens.view(), &cache.input, &params.input, demb.view(), &mut grads.input, false);
    Ok(())
}

/// Mean per-token quantile loss of one sample and its gradient w.r.t. the
/// predictions. Tokens without an observed target are excluded; `None` when
/// no token qualifies.
pub fn sample_loss(pred: ArrayView2<f64>, batch: &PatchBatch, q: &[f64]) -> (Option<f64>, Array2<f64>) {
    let m = batch.targets.ncols();
    let nq = q.len();
    let mut dpred = Array2::zeros(pred.raw_dim());
    let valid: Vec<usize> = (0..batch.n_patches())
        .filter(|&t| batch.target_observed.row(t).iter().any(|&o| o))
        .collect();
    if valid.is_empty() {
        return (None, dpred);
    }
    let inv_tokens = 1.0 / valid.len() as f64;
    let mut total = 0.0;
    for &t in &valid {
        let row = pred.row(t);
        let p = row.into_shape_with_order((m, nq)).expect("contiguous prediction row");
        let obs = batch.target_observed.row(t);
        let n_obs = obs.iter().filter(|&&o| o).count();
        total += quantile_loss(p, batch.targets.row(t), obs, q);
        let w = inv_tokens / (n_obs * nq) as f64;
        for j in 0..m {
            if !obs[j] {
                continue;
            }
            let y = batch.targets[[t, j]];
            for (k, &level) in q.iter().enumerate() {
                let yhat = p[[j, k]];
                dpred[[t, j * nq + k]] = if yhat <= y { -level * w } else { (1.0 - level) * w };
            }
        }
    }
    (Some(total * inv_tokens), dpred)
}

/// Predictions and mean loss of a batch.
pub struct ModelOutput {
    /// Per sample `[n_tokens, m_out * |Q|]`.
    pub predictions: Vec<Array2<f64>>,
    pub loss: f64,
    /// Samples that contributed to the loss.
    pub contributing: usize,
}

pub fn model_forward(batch: &[PatchBatch], params: &ModelParams) -> Result<ModelOutput> {
    let q = &params.config.quantiles;
    let mut predictions = Vec::with_capacity(batch.len());
    let (mut sum, mut contributing) = (0.0, 0);
    for b in batch {
        let pred = predict_tokens(params, b.tokens.view())?;
        if let (Some(l), _) = sample_loss(pred.view(), b, q) {
            sum += l;
            contributing += 1;
        }
        predictions.push(pred);
    }
    let loss = if contributing > 0 { sum / contributing as f64 } else { 0.0 };
    Ok(ModelOutput {
        predictions,
        loss,
        contributing,
    })
}

/// Per-sample loss and gradient (unscaled); `None` loss when the sample has
/// no observed targets.
pub fn sample_loss_and_grad(params: &ModelParams, batch: &PatchBatch) -> Result<(Option<f64>, ModelParams)> {
    let (pred, cache) = forward_cached(params, batch.tokens.view())?;
    let (loss, dpred) = sample_loss(pred.view(), batch, &params.config.quantiles);
    let mut grads = params.zeros_like();
    if loss.is_some() {
        backward(params, &cache, dpred.view(), &mut grads)?;
    }
    Ok((loss, grads))
}

/// Mean batch loss and its exact gradient.
pub fn loss_and_grad(params: &ModelParams, batch: &[PatchBatch]) -> Result<(f64, ModelParams)> {
    let per_sample = batch
        .iter()
        .map(|b| sample_loss_and_grad(params, b))
        .collect::<Result<Vec<_>>>()?;
    Ok(reduce_sample_grads(params, per_sample))
}

/// Averages per-sample results in order over contributing samples.
pub fn reduce_sample_grads(params: &ModelParams, per_sample: Vec<(Option<f64>, ModelParams)>) -> (f64, ModelParams) {
    let mut grads = params.zeros_like();
    let (mut sum, mut count) = (0.0, 0usize);
    for (loss, g) in per_sample {
        if let Some(l) = loss {
            sum += l;
            count += 1;
            grads.add_assign(&g);
        }
    }
    if count == 0 {
        return (0.0, grads);
    }
    grads.scale(1.0 / count as f64);
    (sum / count as f64, grads)
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantileForecast {
    /// `[h, |Q|]` in the original scale, nondecreasing along each row.
    pub values: Array2<f64>,
    pub quantile_levels: Vec<f64>,
}

impl QuantileForecast {
    pub fn horizon(&self) -> usize {
        self.values.nrows()
    }

    pub fn median(&self) -> Vec<f64> {
        let idx = self
            .quantile_levels
            .iter()
            .position(|&q| (q - 0.5).abs() < 1e-12)
            .unwrap_or(self.quantile_levels.len() / 2);
        self.values.column(idx).to_vec()
    }
}

/// Normalizes the most recent context, patches it and returns the batch.
pub(crate) fn context_batch(context: &TimeSeries, config: &ModelConfig) -> Result<PatchBatch> {
    if context.is_empty() {
        return Err(Error::InvalidArgument("empty context".into()));
    }
    let max = config.max_context();
    let recent = if context.len() > max {
        context.slice(context.len() - max, context.len())
    } else {
        context.clone()
    };
    let (norm, stats) = zscore_normalize(&recent)?;
    patchify_normalized(&norm, &norm, stats, config.m_in)
}

/// Converts normalized head outputs (rows of `[m_out, |Q|]`) into an
/// `h`-step forecast in the original scale with sorted quantiles.
pub(crate) fn assemble_forecast(rows: ArrayView2<f64>, h: usize, batch: &PatchBatch, config: &ModelConfig) -> QuantileForecast {
    let (m, nq) = (config.m_out, config.n_quantiles());
    let mut values = Array2::zeros((h, nq));
    for step in 0..h {
        let (row, j) = (step / m, step % m);
        let raw: Vec<f64> = (0..nq).map(|k| rows[[row, j * nq + k]]).collect();
        let mut v = denormalize(&raw, batch.stats);
        v.sort_by(f64::total_cmp);
        values.row_mut(step).assign(&Array1::from(v));
    }
    QuantileForecast {
        values,
        quantile_levels: config.quantiles.clone(),
    }
}

/// Multi-patch forecast in one forward pass: future patches are fed as
/// fully missing tokens.
pub fn forecast(context: &TimeSeries, h: usize, params: &ModelParams) -> Result<QuantileForecast> {
    Ok(forecast_counted(context, h, params)?.0)
}

/// [`forecast`] plus the number of backbone passes it used.
pub fn forecast_counted(context: &TimeSeries, h: usize, params: &ModelParams) -> Result<(QuantileForecast, usize)> {
    if h == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let c = &params.config;
    let mut batch = context_batch(context, c)?;
    let n = batch.n_patches();
    let k = h.div_ceil(c.m_out);
    batch.append_placeholders(k - 1);
    let pred = predict_tokens(params, batch.tokens.view())?;
    let rows = pred.slice(s![n - 1..n + k - 1, ..]);
    Ok((assemble_forecast(rows, h, &batch, c), 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            m_in: 4,
            m_out: 4,
            d: 8,
            d_ff: 12,
            n_heads: 2,
            n_blocks: 2,
            quantiles: default_quantiles(),
        }
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let mut c = tiny_config();
        c.m_out = 5;
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.quantiles = vec![0.5, 0.4];
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.n_heads = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn quantile_loss_examples() {
        let q = default_quantiles();
        let pred = Array2::from_elem((1, 9), 2.0);
        assert_eq!(quantile_loss(pred.view(), array![2.0].view(), array![true].view(), &q), 0.0);

        let pred = Array2::from_elem((1, 9), 1.0);
        let l = quantile_loss(pred.view(), array![2.0].view(), array![true].view(), &q);
        assert!((l - 0.5).abs() < 1e-12);

        let pred = Array2::from_shape_fn((2, 9), |(t, k)| t as f64 + k as f64 * 0.1);
        let both = quantile_loss(pred.view(), array![0.7, 9.0].view(), array![true, false].view(), &q);
        let first = quantile_loss(pred.slice(s![0..1, ..]), array![0.7].view(), array![true].view(), &q);
        assert_eq!(both, first);

        assert_eq!(quantile_loss(pred.view(), array![1.0, 1.0].view(), array![false, false].view(), &q), 0.0);
    }

    #[test]
    fn reference_shapes() {
        let c = ModelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let input = ResidualBlockParams::init(64, 512, 512, &mut rng);
        assert_eq!(input_residual_block(Array1::zeros(64).view(), &input).len(), 512);
        let output = ResidualBlockParams::init(512, 512, 32 * 9, &mut rng);
        assert_eq!(output_residual_block(Array1::zeros(512).view(), &output, c.m_out).unwrap().dim(), (32, 9));
    }

    #[test]
    fn input_block_skip_is_linear() {
        let mut p = ResidualBlockParams::zeros(4, 3, 2);
        p.w_skip = array![[1.0, 0.0, 2.0, 0.0], [0.0, -1.0, 0.0, 0.5]];
        let y = input_residual_block(array![1.0, 2.0, 3.0, 4.0].view(), &p);
        assert_eq!(y, array![7.0, 0.0]);
    }

    #[test]
    fn embedding_is_position_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = ModelParams::init(&tiny_config(), &mut rng).unwrap();
        let tokens = Array2::from_shape_fn((3, 8), |(i, j)| ((i * 8 + j) as f64).cos());
        let (emb, _) = residual_forward(tokens.view(), &params.input);
        for t in 0..3 {
            let single = input_residual_block(tokens.row(t), &params.input);
            for j in 0..8 {
                assert!((emb[[t, j]] - single[j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn names_are_unique_and_cover_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ModelParams::init(&tiny_config(), &mut rng).unwrap();
        let names: Vec<_> = p.tensors().into_iter().map(|(n, _)| n).collect();
        let unique: std::collections::BTreeSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
        assert!(names.contains(&"blocks.1.slstm.r_f".to_string()));
        assert_eq!(p.to_flat().len(), p.parameter_count());
        assert!(decays("blocks.0.slstm.w_z") && decays("output.w_skip"));
        assert!(!decays("blocks.0.slstm.b_f") && !decays("final_norm") && !decays("blocks.0.norm1"));
    }

    #[test]
    fn zero_head_forecasts_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = ModelParams::init(&tiny_config(), &mut rng).unwrap();
        params.output = ResidualBlockParams::zeros(8, 8, 4 * 9);
        let ctx = TimeSeries::new("c", vec![5.0; 10]);
        let f = forecast(&ctx, 6, &params).unwrap();
        assert_eq!(f.values.dim(), (6, 9));
        assert!(f.values.iter().all(|&v| (v - 5.0).abs() < 1e-12));
    }

    #[test]
    fn forecast_validates_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = ModelParams::init(&tiny_config(), &mut rng).unwrap();
        assert!(forecast(&TimeSeries::new("c", vec![1.0, 2.0]), 0, &params).is_err());
        assert!(forecast(&TimeSeries::new("c", vec![]), 3, &params).is_err());
        let hidden = TimeSeries::with_mask("c", vec![1.0, 2.0], vec![false, false]).unwrap();
        assert!(forecast(&hidden, 3, &params).is_err());
    }

    #[test]
    fn multi_patch_is_single_pass_and_truncated() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = ModelParams::init(&tiny_config(), &mut rng).unwrap();
        let ctx = TimeSeries::new("c", (0..13).map(|v| (v as f64 * 0.4).sin()).collect());
        let (f, passes) = forecast_counted(&ctx, 10, &params).unwrap();
        assert_eq!(passes, 1);
        assert_eq!(f.horizon(), 10);
        // the first patch equals the k = 1 forecast
        let (g, _) = forecast_counted(&ctx, 4, &params).unwrap();
        for t in 0..4 {
            for k in 0..9 {
                assert!((f.values[[t, k]] - g.values[[t, k]]).abs() < 1e-12);
            }
        }
        for row in f.values.rows() {
            assert!(row.windows(2).into_iter().all(|w| w[0] <= w[1]));
        }
    }
}
