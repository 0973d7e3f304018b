// SPDX-License-Identifier: MIT OR Apache-2.0

//! Row-wise primitives shared by the backbone and the residual heads.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

/// RMSNorm epsilon.
pub const RMS_EPS: f64 = 1e-6;

/// `y_i = x_i / sqrt(mean(x^2) + eps) * gain_i`
pub fn rmsnorm(x: ArrayView1<f64>, gain: ArrayView1<f64>, eps: f64) -> Array1<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let r = 1.0 / (ms + eps).sqrt();
    Zip::from(&x).and(&gain).map_collect(|&xi, &g| xi * r * g)
}

/// Row-wise RMSNorm; returns the output and each row's inverse RMS.
pub fn rmsnorm_rows(x: ArrayView2<f64>, gain: ArrayView1<f64>) -> (Array2<f64>, Array1<f64>) {
    let d = x.ncols() as f64;
    let inv: Array1<f64> = x
        .rows()
        .into_iter()
        .map(|row| 1.0 / (row.iter().map(|v| v * v).sum::<f64>() / d + RMS_EPS).sqrt())
        .collect();
    let mut y = x.to_owned();
    for (mut row, &r) in y.rows_mut().into_iter().zip(&inv) {
        Zip::from(&mut row).and(&gain).for_each(|v, &g| *v *= r * g);
    }
    (y, inv)
}

/// Backward of [`rmsnorm_rows`]; accumulates into `dgain` and returns `dx`.
pub fn rmsnorm_rows_backward(
    x: ArrayView2<f64>,
    inv: &Array1<f64>,
    gain: ArrayView1<f64>,
    dy: ArrayView2<f64>,
    dgain: &mut Array1<f64>,
) -> Array2<f64> {
    let d = x.ncols() as f64;
    let mut dx = Array2::zeros(x.raw_dim());
    for (t, &r) in inv.iter().enumerate() {
        let xr = x.row(t);
        let dyr = dy.row(t);
        let mut dot = 0.0;
        for j in 0..xr.len() {
            let dg = dyr[j] * gain[j];
            dgain[j] += dyr[j] * xr[j] * r;
            dot += dg * xr[j];
        }
        let r3 = r * r * r / d;
        let mut out = dx.row_mut(t);
        for j in 0..xr.len() {
            out[j] = r * dyr[j] * gain[j] - xr[j] * r3 * dot;
        }
    }
    dx
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    cdf + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `x · wᵀ + b` for `w: [out, in]`.
pub fn linear(x: ArrayView2<f64>, w: &Array2<f64>, b: Option<&Array1<f64>>) -> Array2<f64> {
    let mut y = match b {
        Some(b) => b.broadcast((x.nrows(), b.len())).expect("bias width").to_owned(),
        None => Array2::zeros((x.nrows(), w.nrows())),
    };
    general_mat_mul(1.0, &x, &w.t(), 1.0, &mut y);
    y
}

/// Accumulates `dw += dyᵀ · x` and `db += Σ_rows dy`; returns `dy · w`.
pub fn linear_backward(
    x: ArrayView2<f64>,
    w: &Array2<f64>,
    dy: ArrayView2<f64>,
    dw: &mut Array2<f64>,
    db: Option<&mut Array1<f64>>,
) -> Array2<f64> {
    general_mat_mul(1.0, &dy.t(), &x, 1.0, dw);
    if let Some(db) = db {
        *db += &dy.sum_axis(Axis(0));
    }
    dy.dot(w)
}

/// Parameter-free accumulate of `dw += dyᵀ · x` (no input gradient).
pub fn outer_accumulate(x: ArrayView2<f64>, dy: ArrayView2<f64>, dw: &mut Array2<f64>) {
    general_mat_mul(1.0, &dy.t(), &x, 1.0, dw);
}
