// SPDX-License-Identifier: MIT OR Apache-2.0

//! Scalar LSTM with exponential input/forget gates, a normalizer state and
//! head-wise block-diagonal recurrence.
//!
//! The exponential gates are evaluated in log space against a running
//! stabilizer `m`. Since `c` and `n` are rescaled by the same factor, the
//! hidden state `o * c / n` does not depend on `m`; the backward pass therefore
//! treats `m` as a constant.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::ops::{linear, linear_backward, sigmoid};
use crate::error::{Error, Result};

/// Gate order used for every `[_; 4]` array: cell input, input, forget, output.
pub const GATE_NAMES: [&str; 4] = ["z", "i", "f", "o"];
pub const Z: usize = 0;
pub const I: usize = 1;
pub const F: usize = 2;
pub const O: usize = 3;

/// Forget-gate bias at initialization.
pub const FORGET_BIAS_INIT: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SLstmLayerParams {
    pub n_heads: usize,
    /// Input projections `[d, d_in]`.
    pub w: [Array2<f64>; 4],
    /// Block-diagonal recurrent matrices `[d, d]`; off-block entries stay 0.
    pub r: [Array2<f64>; 4],
    pub b: [Array1<f64>; 4],
}

impl SLstmLayerParams {
    pub fn zeros(d_in: usize, d: usize, n_heads: usize) -> Result<Self> {
        if n_heads == 0 || d % n_heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "hidden size {d} is not divisible by {n_heads} heads"
            )));
        }
        Ok(Self {
            n_heads,
            w: std::array::from_fn(|_| Array2::zeros((d, d_in))),
            r: std::array::from_fn(|_| Array2::zeros((d, d))),
            b: std::array::from_fn(|_| Array1::zeros(d)),
        })
    }

    /// Fan-in uniform input projections, small normal recurrent blocks,
    /// forget bias at [`FORGET_BIAS_INIT`].
    pub fn init(d_in: usize, d: usize, n_heads: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut p = Self::zeros(d_in, d, n_heads)?;
        let limit = (3.0 / d_in as f64).sqrt();
        let uni = Uniform::new_inclusive(-limit, limit);
        let hd = p.head_dim();
        let normal = Normal::new(0.0, 1.0 / (hd as f64).sqrt()).expect("valid std");
        for g in 0..4 {
            p.w[g].iter_mut().for_each(|v| *v = uni.sample(rng));
            for i in 0..d {
                let head = i / hd;
                for j in head * hd..(head + 1) * hd {
                    p.r[g][[i, j]] = normal.sample(rng);
                }
            }
        }
        p.b[F].fill(FORGET_BIAS_INIT);
        Ok(p)
    }

    pub fn d(&self) -> usize {
        self.b[0].len()
    }

    pub fn d_in(&self) -> usize {
        self.w[0].ncols()
    }

    pub fn head_dim(&self) -> usize {
        self.d() / self.n_heads
    }

    /// Whether `r[i][j]` lies inside a diagonal head block.
    pub fn in_block(&self, i: usize, j: usize) -> bool {
        let hd = self.head_dim();
        i / hd == j / hd
    }

    /// Adds `R_g · h` restricted to the diagonal blocks into `out`.
    fn recurrent_into(&self, g: usize, h: &[f64], out: &mut [f64]) {
        let hd = self.head_dim();
        let r = self.r[g].as_slice().expect("standard layout");
        let d = self.d();
        for head in 0..self.n_heads {
            let lo = head * hd;
            for i in lo..lo + hd {
                let row = &r[i * d + lo..i * d + lo + hd];
                out[i] += row.iter().zip(&h[lo..lo + hd]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }

    /// Adds `R_gᵀ · g` restricted to the diagonal blocks into `out`.
    fn recurrent_transpose_into(&self, g: usize, grad: &[f64], out: &mut [f64]) {
        let hd = self.head_dim();
        let r = self.r[g].as_slice().expect("standard layout");
        let d = self.d();
        for head in 0..self.n_heads {
            let lo = head * hd;
            for i in lo..lo + hd {
                let gi = grad[i];
                if gi == 0.0 {
                    continue;
                }
                let row = &r[i * d + lo..i * d + lo + hd];
                for (o, a) in out[lo..lo + hd].iter_mut().zip(row) {
                    *o += a * gi;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SLstmState {
    pub c: Array1<f64>,
    pub n: Array1<f64>,
    pub h: Array1<f64>,
    /// Log-domain stabilizer.
    pub m: Array1<f64>,
}

impl SLstmState {
    pub fn zeros(d: usize) -> Self {
        Self {
            c: Array1::zeros(d),
            n: Array1::zeros(d),
            h: Array1::zeros(d),
            m: Array1::zeros(d),
        }
    }
}

/// Pre-activations `[z̃, ĩ, f̃, õ]` for one step.
fn preactivations(x: ArrayView1<f64>, h_prev: &[f64], p: &SLstmLayerParams) -> [Vec<f64>; 4] {
    std::array::from_fn(|g| {
        let mut v: Vec<f64> = (p.w[g].dot(&x) + &p.b[g]).to_vec();
        p.recurrent_into(g, h_prev, &mut v);
        v
    })
}

fn check_step_dims(x: ArrayView1<f64>, state: &SLstmState, p: &SLstmLayerParams) -> Result<()> {
    let d = p.d();
    if x.len() != p.d_in() {
        return Err(Error::DimensionMismatch(format!("input has {} entries, expected {}", x.len(), p.d_in())));
    }
    for (name, v) in [("c", &state.c), ("n", &state.n), ("h", &state.h), ("m", &state.m)] {
        if v.len() != d {
            return Err(Error::DimensionMismatch(format!("state {name} has {} entries, expected {d}", v.len())));
        }
    }
    Ok(())
}

/// Stabilizer and rescaled gates `(m, exp(ĩ−m), exp(f̃+m_prev−m))`. An empty
/// state (`n = 0`) carries nothing forward, so the stabilizer restarts at ĩ;
/// otherwise a dominant forget gate would underflow both terms to 0/0.
#[inline]
fn stabilized_gates(i_pre: f64, f_pre: f64, m_prev: f64, n_prev: f64) -> (f64, f64, f64) {
    if n_prev == 0.0 {
        return (i_pre, 1.0, 0.0);
    }
    let m = (f_pre + m_prev).max(i_pre);
    (m, (i_pre - m).exp(), (f_pre + m_prev - m).exp())
}

/// One stabilized recurrence step.
pub fn slstm_step(x: ArrayView1<f64>, state: &SLstmState, p: &SLstmLayerParams) -> Result<(Array1<f64>, SLstmState)> {
    check_step_dims(x, state, p)?;
    let h_prev = state.h.to_vec();
    let pre = preactivations(x, &h_prev, p);
    let d = p.d();
    let mut next = SLstmState::zeros(d);
    for j in 0..d {
        let z = pre[Z][j].tanh();
        let o = sigmoid(pre[O][j]);
        let (m, ip, fp) = stabilized_gates(pre[I][j], pre[F][j], state.m[j], state.n[j]);
        let c = fp * state.c[j] + ip * z;
        let n = fp * state.n[j] + ip;
        next.c[j] = c;
        next.n[j] = n;
        next.m[j] = m;
        next.h[j] = o * c / n;
    }
    Ok((next.h.clone(), next))
}

/// The same step with raw `exp` gates and no stabilizer. Overflows for large
/// gate pre-activations; kept as a reference path.
pub fn slstm_step_unstabilized(
    x: ArrayView1<f64>,
    state: &SLstmState,
    p: &SLstmLayerParams,
) -> Result<(Array1<f64>, SLstmState)> {
    check_step_dims(x, state, p)?;
    let pre = preactivations(x, &state.h.to_vec(), p);
    let d = p.d();
    let mut next = SLstmState::zeros(d);
    for j in 0..d {
        let z = pre[Z][j].tanh();
        let i = pre[I][j].exp();
        let f = pre[F][j].exp();
        let o = sigmoid(pre[O][j]);
        next.c[j] = f * state.c[j] + i * z;
        next.n[j] = f * state.n[j] + i;
        next.h[j] = o * next.c[j] / next.n[j];
    }
    Ok((next.h.clone(), next))
}

/// Activations retained for the backward pass.
#[derive(Clone, Debug)]
pub struct SLstmCache {
    x: Array2<f64>,
    init: SLstmState,
    z: Array2<f64>,
    o: Array2<f64>,
    ip: Array2<f64>,
    fp: Array2<f64>,
    c: Array2<f64>,
    n: Array2<f64>,
    h: Array2<f64>,
}

/// Left-to-right unroll over the rows of `x`; returns the hidden states.
pub fn slstm_layer_forward(x: ArrayView2<f64>, p: &SLstmLayerParams, init: &SLstmState) -> Array2<f64> {
    slstm_layer_forward_cached(x, p, init).0
}

pub fn slstm_layer_forward_cached(
    x: ArrayView2<f64>,
    p: &SLstmLayerParams,
    init: &SLstmState,
) -> (Array2<f64>, SLstmCache) {
    let (t_len, d) = (x.nrows(), p.d());
    let mut pre: [Array2<f64>; 4] = std::array::from_fn(|g| linear(x, &p.w[g], Some(&p.b[g])));
    let mut cache = SLstmCache {
        x: x.to_owned(),
        init: init.clone(),
        z: Array2::zeros((t_len, d)),
        o: Array2::zeros((t_len, d)),
        ip: Array2::zeros((t_len, d)),
        fp: Array2::zeros((t_len, d)),
        c: Array2::zeros((t_len, d)),
        n: Array2::zeros((t_len, d)),
        h: Array2::zeros((t_len, d)),
    };
    let mut c = init.c.to_vec();
    let mut n = init.n.to_vec();
    let mut h = init.h.to_vec();
    let mut m = init.m.to_vec();
    let mut row = vec![0.0; d];

    for t in 0..t_len {
        for (g, pre_g) in pre.iter_mut().enumerate() {
            row.iter_mut().for_each(|v| *v = 0.0);
            p.recurrent_into(g, &h, &mut row);
            let mut r = pre_g.row_mut(t);
            for j in 0..d {
                r[j] += row[j];
            }
        }
        for j in 0..d {
            let zt = pre[Z][[t, j]].tanh();
            let ot = sigmoid(pre[O][[t, j]]);
            let (it, ft) = (pre[I][[t, j]], pre[F][[t, j]]);
            let (mt, ip, fp) = stabilized_gates(it, ft, m[j], n[j]);
            c[j] = fp * c[j] + ip * zt;
            n[j] = fp * n[j] + ip;
            m[j] = mt;
            h[j] = ot * c[j] / n[j];

            cache.z[[t, j]] = zt;
            cache.o[[t, j]] = ot;
            cache.ip[[t, j]] = ip;
            cache.fp[[t, j]] = fp;
            cache.c[[t, j]] = c[j];
            cache.n[[t, j]] = n[j];
            cache.h[[t, j]] = h[j];
        }
    }
    (cache.h.clone(), cache)
}

/// Reverse-mode pass. Accumulates parameter gradients into `grads` (recurrent
/// gradients only inside the diagonal blocks) and returns the input gradient.
pub fn slstm_layer_backward(
    cache: &SLstmCache,
    p: &SLstmLayerParams,
    dh_out: ArrayView2<f64>,
    grads: &mut SLstmLayerParams,
) -> Result<Array2<f64>> {
    let (t_len, d) = (cache.h.nrows(), p.d());
    if dh_out.dim() != (t_len, d) {
        return Err(Error::DimensionMismatch(format!(
            "output gradient is {:?}, cache holds {:?}",
            dh_out.dim(),
            (t_len, d)
        )));
    }
    let mut gpre: [Array2<f64>; 4] = std::array::from_fn(|_| Array2::zeros((t_len, d)));
    let mut dh_rec = vec![0.0; d];
    let mut dc = vec![0.0; d];
    let mut dn = vec![0.0; d];

    for t in (0..t_len).rev() {
        for j in 0..d {
            let dh = dh_out[[t, j]] + dh_rec[j];
            let (o, n, c) = (cache.o[[t, j]], cache.n[[t, j]], cache.c[[t, j]]);
            let (z, ip, fp) = (cache.z[[t, j]], cache.ip[[t, j]], cache.fp[[t, j]]);
            let hn = c / n;
            let (c_prev, n_prev) = if t == 0 {
                (cache.init.c[j], cache.init.n[j])
            } else {
                (cache.c[[t - 1, j]], cache.n[[t - 1, j]])
            };
            let dcj = dc[j] + dh * o / n;
            let dnj = dn[j] - dh * o * hn / n;
            gpre[O][[t, j]] = dh * hn * o * (1.0 - o);
            gpre[F][[t, j]] = (dcj * c_prev + dnj * n_prev) * fp;
            gpre[I][[t, j]] = (dcj * z + dnj) * ip;
            gpre[Z][[t, j]] = dcj * ip * (1.0 - z * z);
            dc[j] = dcj * fp;
            dn[j] = dnj * fp;
        }
        dh_rec.iter_mut().for_each(|v| *v = 0.0);
        for (g, gp) in gpre.iter().enumerate() {
            let row = gp.row(t);
            p.recurrent_transpose_into(g, row.as_slice().expect("contiguous row"), &mut dh_rec);
        }
    }

    // Hidden states seen by the recurrence: h_{t-1} for t = 0..T.
    let mut h_prev = Array2::zeros((t_len, d));
    h_prev.row_mut(0).assign(&cache.init.h);
    if t_len > 1 {
        h_prev.slice_mut(ndarray::s![1.., ..]).assign(&cache.h.slice(ndarray::s![..t_len - 1, ..]));
    }

    let mut dx = Array2::zeros((t_len, p.d_in()));
    let hd = p.head_dim();
    for g in 0..4 {
        dx += &linear_backward(cache.x.view(), &p.w[g], gpre[g].view(), &mut grads.w[g], Some(&mut grads.b[g]));
        let full = gpre[g].t().dot(&h_prev);
        for head in 0..p.n_heads {
            let lo = head * hd;
            let blk = full.slice(ndarray::s![lo..lo + hd, lo..lo + hd]);
            let mut dst = grads.r[g].slice_mut(ndarray::s![lo..lo + hd, lo..lo + hd]);
            dst += &blk;
        }
    }
    Ok(dx)
}
