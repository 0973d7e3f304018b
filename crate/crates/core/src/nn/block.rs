// SPDX-License-Identifier: MIT OR Apache-2.0

//! Pre-norm residual block (sLSTM then feed-forward) and the stacked backbone.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::ops::{gelu, gelu_grad, linear, linear_backward, rmsnorm_rows, rmsnorm_rows_backward};
use super::slstm::{slstm_layer_backward, slstm_layer_forward_cached, SLstmCache, SLstmLayerParams, SLstmState};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FeedForwardParams {
    /// `[d_ff, d]`
    pub w_in: Array2<f64>,
    pub b_in: Array1<f64>,
    /// `[d, d_ff]`
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

impl FeedForwardParams {
    pub fn zeros(d: usize, d_ff: usize) -> Self {
        Self {
            w_in: Array2::zeros((d_ff, d)),
            b_in: Array1::zeros(d_ff),
            w_out: Array2::zeros((d, d_ff)),
            b_out: Array1::zeros(d),
        }
    }

    pub fn init(d: usize, d_ff: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(d, d_ff);
        fill_fan_in(&mut p.w_in, rng);
        fill_fan_in(&mut p.w_out, rng);
        p
    }
}

/// Uniform init with variance `1 / fan_in`.
pub(crate) fn fill_fan_in(w: &mut Array2<f64>, rng: &mut impl Rng) {
    let limit = (3.0 / w.ncols() as f64).sqrt();
    let u = Uniform::new_inclusive(-limit, limit);
    w.iter_mut().for_each(|v| *v = u.sample(rng));
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub slstm: SLstmLayerParams,
    pub norm1_gain: Array1<f64>,
    pub norm2_gain: Array1<f64>,
    pub ffn: FeedForwardParams,
}

impl BlockParams {
    pub fn zeros(d: usize, d_ff: usize, n_heads: usize) -> Result<Self> {
        if d_ff == 0 {
            return Err(Error::InvalidArgument("feed-forward width must be positive".into()));
        }
        Ok(Self {
            slstm: SLstmLayerParams::zeros(d, d, n_heads)?,
            norm1_gain: Array1::ones(d),
            norm2_gain: Array1::ones(d),
            ffn: FeedForwardParams::zeros(d, d_ff),
        })
    }

    pub fn init(d: usize, d_ff: usize, n_heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if d_ff == 0 {
            return Err(Error::InvalidArgument("feed-forward width must be positive".into()));
        }
        Ok(Self {
            slstm: SLstmLayerParams::init(d, d, n_heads, rng)?,
            norm1_gain: Array1::ones(d),
            norm2_gain: Array1::ones(d),
            ffn: FeedForwardParams::init(d, d_ff, rng),
        })
    }

    /// Same shapes with every entry zero (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |_, a| a.fill(0.0));
        z
    }

    pub(crate) fn visit<'a>(&'a self, f: &mut dyn FnMut(String, TensorRef<'a>)) {
        for g in 0..4 {
            let name = super::slstm::GATE_NAMES[g];
            f(format!("slstm.w_{name}"), TensorRef::Matrix(&self.slstm.w[g]));
            f(format!("slstm.r_{name}"), TensorRef::Matrix(&self.slstm.r[g]));
            f(format!("slstm.b_{name}"), TensorRef::Vector(&self.slstm.b[g]));
        }
        f("norm1".into(), TensorRef::Vector(&self.norm1_gain));
        f("norm2".into(), TensorRef::Vector(&self.norm2_gain));
        f("ffn.w_in".into(), TensorRef::Matrix(&self.ffn.w_in));
        f("ffn.b_in".into(), TensorRef::Vector(&self.ffn.b_in));
        f("ffn.w_out".into(), TensorRef::Matrix(&self.ffn.w_out));
        f("ffn.b_out".into(), TensorRef::Vector(&self.ffn.b_out));
    }

    pub(crate) fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut [f64])) {
        for g in 0..4 {
            let name = super::slstm::GATE_NAMES[g];
            f(format!("slstm.w_{name}"), slice_mut2(&mut self.slstm.w[g]));
            f(format!("slstm.r_{name}"), slice_mut2(&mut self.slstm.r[g]));
            f(format!("slstm.b_{name}"), slice_mut1(&mut self.slstm.b[g]));
        }
        f("norm1".into(), slice_mut1(&mut self.norm1_gain));
        f("norm2".into(), slice_mut1(&mut self.norm2_gain));
        f("ffn.w_in".into(), slice_mut2(&mut self.ffn.w_in));
        f("ffn.b_in".into(), slice_mut1(&mut self.ffn.b_in));
        f("ffn.w_out".into(), slice_mut2(&mut self.ffn.w_out));
        f("ffn.b_out".into(), slice_mut1(&mut self.ffn.b_out));
    }
}

/// Borrowed view of one parameter tensor.
#[derive(Clone, Copy, Debug)]
pub enum TensorRef<'a> {
    Vector(&'a Array1<f64>),
    Matrix(&'a Array2<f64>),
}

impl<'a> TensorRef<'a> {
    pub fn shape(&self) -> Vec<usize> {
        match self {
            TensorRef::Vector(v) => vec![v.len()],
            TensorRef::Matrix(m) => vec![m.nrows(), m.ncols()],
        }
    }

    pub fn data(&self) -> &'a [f64] {
        match self {
            TensorRef::Vector(v) => v.as_slice().expect("standard layout"),
            TensorRef::Matrix(m) => m.as_slice().expect("standard layout"),
        }
    }
}

pub(crate) fn slice_mut1(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

pub(crate) fn slice_mut2(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

#[derive(Clone, Debug)]
pub struct BlockCache {
    x: Array2<f64>,
    inv1: Array1<f64>,
    slstm: SLstmCache,
    y1: Array2<f64>,
    n2: Array2<f64>,
    inv2: Array1<f64>,
    pre_ffn: Array2<f64>,
    act_ffn: Array2<f64>,
}

pub fn feed_forward(u: ArrayView2<f64>, p: &FeedForwardParams) -> Array2<f64> {
    linear(linear(u, &p.w_in, Some(&p.b_in)).mapv(gelu).view(), &p.w_out, Some(&p.b_out))
}

pub fn block_forward(x: ArrayView2<f64>, p: &BlockParams) -> Array2<f64> {
    block_forward_cached(x, p).0
}

pub fn block_forward_cached(x: ArrayView2<f64>, p: &BlockParams) -> (Array2<f64>, BlockCache) {
    let (n1, inv1) = rmsnorm_rows(x, p.norm1_gain.view());
    let init = SLstmState::zeros(p.slstm.d());
    let (s, slstm) = slstm_layer_forward_cached(n1.view(), &p.slstm, &init);
    let y1 = &x + &s;
    let (n2, inv2) = rmsnorm_rows(y1.view(), p.norm2_gain.view());
    let pre_ffn = linear(n2.view(), &p.ffn.w_in, Some(&p.ffn.b_in));
    let act_ffn = pre_ffn.mapv(gelu);
    let y = &y1 + &linear(act_ffn.view(), &p.ffn.w_out, Some(&p.ffn.b_out));
    let cache = BlockCache {
        x: x.to_owned(),
        inv1,
        slstm,
        y1,
        n2,
        inv2,
        pre_ffn,
        act_ffn,
    };
    (y, cache)
}

pub fn block_backward(
    cache: &BlockCache,
    p: &BlockParams,
    dy: ArrayView2<f64>,
    grads: &mut BlockParams,
) -> Result<Array2<f64>> {
    let dact = linear_backward(
        cache.act_ffn.view(),
        &p.ffn.w_out,
        dy,
        &mut grads.ffn.w_out,
        Some(&mut grads.ffn.b_out),
    );
    let dpre = dact * &cache.pre_ffn.mapv(gelu_grad);
    let dn2 = linear_backward(cache.n2.view(), &p.ffn.w_in, dpre.view(), &mut grads.ffn.w_in, Some(&mut grads.ffn.b_in));
    let dy1 = &dy + &rmsnorm_rows_backward(
        cache.y1.view(),
        &cache.inv2,
        p.norm2_gain.view(),
        dn2.view(),
        &mut grads.norm2_gain,
    );
    let dn1 = slstm_layer_backward(&cache.slstm, &p.slstm, dy1.view(), &mut grads.slstm)?;
    let dx = &dy1
        + &rmsnorm_rows_backward(
            cache.x.view(),
            &cache.inv1,
            p.norm1_gain.view(),
            dn1.view(),
            &mut grads.norm1_gain,
        );
    Ok(dx)
}

/// Block stack followed by a final RMSNorm.
#[derive(Clone, Debug)]
pub struct BackboneCache {
    blocks: Vec<BlockCache>,
    pre_norm: Array2<f64>,
    inv: Array1<f64>,
}

pub fn backbone_forward(x: ArrayView2<f64>, blocks: &[BlockParams], final_gain: &Array1<f64>) -> Result<Array2<f64>> {
    Ok(backbone_forward_cached(x, blocks, final_gain)?.0)
}

pub fn backbone_forward_cached(
    x: ArrayView2<f64>,
    blocks: &[BlockParams],
    final_gain: &Array1<f64>,
) -> Result<(Array2<f64>, BackboneCache)> {
    if blocks.is_empty() {
        return Err(Error::InvalidArgument("backbone needs at least one block".into()));
    }
    let mut caches = Vec::with_capacity(blocks.len());
    let mut h = x.to_owned();
    for b in blocks {
        let (next, cache) = block_forward_cached(h.view(), b);
        caches.push(cache);
        h = next;
    }
    let (y, inv) = rmsnorm_rows(h.view(), final_gain.view());
    Ok((
        y,
        BackboneCache {
            blocks: caches,
            pre_norm: h,
            inv,
        },
    ))
}

/// Returns the input gradient; parameter gradients accumulate into
/// `block_grads` and `final_gain_grad`.
pub fn backbone_backward(
    cache: &BackboneCache,
    blocks: &[BlockParams],
    final_gain: &Array1<f64>,
    dy: ArrayView2<f64>,
    block_grads: &mut [BlockParams],
    final_gain_grad: &mut Array1<f64>,
) -> Result<Array2<f64>> {
    if cache.blocks.len() != blocks.len() || block_grads.len() != blocks.len() {
        return Err(Error::MissingCache("backbone cache does not match the block stack"));
    }
    let mut g = rmsnorm_rows_backward(cache.pre_norm.view(), &cache.inv, final_gain.view(), dy, final_gain_grad);
    for ((c, p), gr) in cache.blocks.iter().zip(blocks).zip(block_grads.iter_mut()).rev() {
        g = block_backward(c, p, g.view(), gr)?;
    }
    Ok(g)
}
