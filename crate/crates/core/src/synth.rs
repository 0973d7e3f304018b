// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic training data: Gaussian-process samples from randomly composed
//! kernels, plus Dirichlet-weighted mixup of normalized segments.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::series::{zscore_normalize, TimeSeries};

/// Periodicities drawn for the "fixed set" half of the periodic prior.
pub const SEASONAL_PERIODS: [f64; 5] = [24.0, 7.0, 12.0, 52.0, 168.0];

/// Diagonal jitter schedule tried before giving up on a gram matrix.
pub const JITTERS: [f64; 3] = [1e-6, 1e-5, 1e-4];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum BaseKernel {
    Periodic { period: f64, length_scale: f64 },
    Rbf { length_scale: f64 },
    RationalQuadratic { length_scale: f64, alpha: f64 },
    /// Compactly supported Wendland kernel `(1-r)_+^3 (3r + 1)`.
    PiecewisePolynomial { length_scale: f64 },
}

impl BaseKernel {
    /// Covariance at lag `dt >= 0`.
    pub fn eval(&self, dt: f64) -> f64 {
        match *self {
            BaseKernel::Periodic { period, length_scale } => {
                let s = (std::f64::consts::PI * dt / period).sin();
                (-2.0 * s * s / (length_scale * length_scale)).exp()
            }
            BaseKernel::Rbf { length_scale } => (-0.5 * (dt / length_scale).powi(2)).exp(),
            BaseKernel::RationalQuadratic { length_scale, alpha } => {
                (1.0 + dt * dt / (2.0 * alpha * length_scale * length_scale)).powf(-alpha)
            }
            BaseKernel::PiecewisePolynomial { length_scale } => {
                let r = dt / length_scale;
                if r >= 1.0 {
                    0.0
                } else {
                    (1.0 - r).powi(3) * (3.0 * r + 1.0)
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GpKernelExpr {
    Leaf(BaseKernel),
    Sum(Box<GpKernelExpr>, Box<GpKernelExpr>),
    Product(Box<GpKernelExpr>, Box<GpKernelExpr>),
}

impl GpKernelExpr {
    pub fn eval(&self, dt: f64) -> f64 {
        match self {
            GpKernelExpr::Leaf(k) => k.eval(dt),
            GpKernelExpr::Sum(a, b) => a.eval(dt) + b.eval(dt),
            GpKernelExpr::Product(a, b) => a.eval(dt) * b.eval(dt),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            GpKernelExpr::Leaf(_) => 1,
            GpKernelExpr::Sum(a, b) | GpKernelExpr::Product(a, b) => a.leaf_count() + b.leaf_count(),
        }
    }

    pub fn leaves(&self) -> Vec<BaseKernel> {
        match self {
            GpKernelExpr::Leaf(k) => vec![*k],
            GpKernelExpr::Sum(a, b) | GpKernelExpr::Product(a, b) => {
                let mut v = a.leaves();
                v.extend(b.leaves());
                v
            }
        }
    }

    /// Gram matrix on the integer grid `0..n`.
    pub fn gram(&self, n: usize) -> Array2<f64> {
        let lags: Vec<f64> = (0..n).map(|l| self.eval(l as f64)).collect();
        Array2::from_shape_fn((n, n), |(i, j)| lags[i.abs_diff(j)])
    }

    /// Gram matrix at arbitrary points.
    pub fn gram_at(&self, points: &[f64]) -> Array2<f64> {
        let n = points.len();
        Array2::from_shape_fn((n, n), |(i, j)| self.eval((points[i] - points[j]).abs()))
    }
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

/// Draws one bank kernel with hyperparameters suited to a series of length `len`.
pub fn sample_base_kernel(rng: &mut impl Rng, len: usize) -> BaseKernel {
    let l = len as f64;
    let ls_hi = (l / 4.0).max(1.0);
    match rng.gen_range(0..4) {
        0 => {
            let fixed: Vec<f64> = SEASONAL_PERIODS.iter().copied().filter(|&p| p <= l / 2.0).collect();
            let period = if !fixed.is_empty() && rng.gen_bool(0.5) {
                fixed[rng.gen_range(0..fixed.len())]
            } else {
                log_uniform(rng, 4.0, (l / 2.0).max(4.0))
            };
            BaseKernel::Periodic {
                period,
                length_scale: log_uniform(rng, 0.5, 2.0),
            }
        }
        1 => BaseKernel::Rbf {
            length_scale: log_uniform(rng, 1.0, ls_hi),
        },
        2 => BaseKernel::RationalQuadratic {
            length_scale: log_uniform(rng, 1.0, ls_hi),
            alpha: log_uniform(rng, 0.1, 10.0),
        },
        _ => BaseKernel::PiecewisePolynomial {
            length_scale: log_uniform(rng, 1.0, ls_hi),
        },
    }
}

/// `j ~ U{1..max_kernels}` bank kernels combined left to right with random
/// `+`/`×`.
pub fn sample_kernel_expr(rng: &mut impl Rng, max_kernels: usize, len: usize) -> GpKernelExpr {
    let j = rng.gen_range(1..=max_kernels.max(1));
    let mut expr = GpKernelExpr::Leaf(sample_base_kernel(rng, len));
    for _ in 1..j {
        let leaf = Box::new(GpKernelExpr::Leaf(sample_base_kernel(rng, len)));
        expr = if rng.gen_bool(0.5) {
            GpKernelExpr::Sum(Box::new(expr), leaf)
        } else {
            GpKernelExpr::Product(Box::new(expr), leaf)
        };
    }
    expr
}

/// Lower Cholesky factor, or `None` if `a` is not numerically positive definite.
pub fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let dot: f64 = l[i * n..i * n + j].iter().zip(&l[j * n..j * n + j]).map(|(x, y)| x * y).sum();
            let v = a[[i, j]] - dot;
            if i == j {
                if v <= 0.0 || !v.is_finite() {
                    return None;
                }
                l[i * n + i] = v.sqrt();
            } else {
                l[i * n + j] = v / l[j * n + j];
            }
        }
    }
    Some(Array2::from_shape_vec((n, n), l).expect("square"))
}

/// Cholesky factor of `gram + jitter·I`, escalating the jitter on failure.
pub fn jittered_cholesky(gram: &Array2<f64>) -> Result<Array2<f64>> {
    for &jitter in &JITTERS {
        let mut g = gram.clone();
        g.diag_mut().iter_mut().for_each(|v| *v += jitter);
        if let Some(l) = cholesky(&g) {
            return Ok(l);
        }
    }
    Err(Error::Cholesky)
}

/// One zero-mean GP draw of length `len`.
pub fn gp_sample(expr: &GpKernelExpr, len: usize, rng: &mut impl Rng) -> Result<TimeSeries> {
    if len < 2 {
        return Err(Error::InvalidArgument("GP samples need at least 2 steps".into()));
    }
    let l = jittered_cholesky(&expr.gram(len))?;
    let z: Array1<f64> = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Ok(TimeSeries::new("gp", l.dot(&z).to_vec()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorFamily {
    /// Random kernel compositions from the full bank.
    KernelSynth,
    /// Periodic × long RBF with additive white noise; season period recorded.
    NoisyLocallyPeriodic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub family: GeneratorFamily,
    pub count: usize,
    pub min_length: usize,
    pub max_length: usize,
    /// Upper bound `J` on kernels per composition.
    pub max_kernels: usize,
    /// White-noise standard deviation (noisy locally-periodic family).
    pub noise_std: f64,
    /// Candidate periods for the noisy locally-periodic family.
    pub periods: Vec<usize>,
    /// Range of the RBF envelope length scale, in multiples of the period
    /// (noisy locally-periodic family). Unset: half to twice the series
    /// length, i.e. a nearly stationary periodic signal.
    pub envelope_periods: Option<[f64; 2]>,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            family: GeneratorFamily::KernelSynth,
            count: 10_000,
            min_length: 128,
            max_length: 1024,
            max_kernels: 4,
            noise_std: 0.2,
            periods: vec![12, 16, 24, 32],
            envelope_periods: None,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_length < 2 || self.min_length > self.max_length {
            return Err(Error::Config(format!(
                "generator lengths must satisfy 2 <= min_length <= max_length, got {}..{}",
                self.min_length, self.max_length
            )));
        }
        if self.max_kernels == 0 {
            return Err(Error::Config("generator.max_kernels must be >= 1".into()));
        }
        if self.family == GeneratorFamily::NoisyLocallyPeriodic && (self.periods.is_empty() || self.periods.contains(&0)) {
            return Err(Error::Config("generator.periods must be non-empty and positive".into()));
        }
        if let Some([lo, hi]) = self.envelope_periods {
            if !(lo > 0.0 && lo <= hi) {
                return Err(Error::Config("generator.envelope_periods must satisfy 0 < lo <= hi".into()));
            }
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config("generator.noise_std must be >= 0".into()));
        }
        Ok(())
    }
}

const MAX_RESAMPLES: usize = 16;

fn generate_one(cfg: &GeneratorConfig, index: usize) -> Result<TimeSeries> {
    let mut rng = rng::derived(cfg.seed, index as u64);
    let len = rng.gen_range(cfg.min_length..=cfg.max_length);
    for _ in 0..MAX_RESAMPLES {
        let (expr, period) = match cfg.family {
            GeneratorFamily::KernelSynth => {
                let e = sample_kernel_expr(&mut rng, cfg.max_kernels, len);
                let p = e.leaves().iter().find_map(|k| match k {
                    BaseKernel::Periodic { period, .. } => Some(period.round().max(1.0) as usize),
                    _ => None,
                });
                (e, p)
            }
            GeneratorFamily::NoisyLocallyPeriodic => {
                let p = cfg.periods[rng.gen_range(0..cfg.periods.len())];
                let (lo, hi) = match cfg.envelope_periods {
                    Some([lo, hi]) => (lo * p as f64, hi * p as f64),
                    None => (len as f64 / 2.0, 2.0 * len as f64),
                };
                let e = GpKernelExpr::Product(
                    Box::new(GpKernelExpr::Leaf(BaseKernel::Periodic {
                        period: p as f64,
                        length_scale: log_uniform(&mut rng, 0.7, 1.5),
                    })),
                    Box::new(GpKernelExpr::Leaf(BaseKernel::Rbf {
                        length_scale: log_uniform(&mut rng, lo, hi),
                    })),
                );
                (e, Some(p))
            }
        };
        match gp_sample(&expr, len, &mut rng) {
            Ok(mut s) => {
                if cfg.family == GeneratorFamily::NoisyLocallyPeriodic && cfg.noise_std > 0.0 {
                    for v in &mut s.values {
                        *v += cfg.noise_std * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                s.id = format!("synth-{}-{index}", cfg.seed);
                s.season_period = period;
                return Ok(s);
            }
            Err(Error::Cholesky) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Cholesky)
}

/// Generates `cfg.count` series. Series `i` uses stream `i` of `cfg.seed`, so
/// the output does not depend on the thread count.
pub fn generate_corpus(cfg: &GeneratorConfig) -> Result<Vec<TimeSeries>> {
    cfg.validate()?;
    (0..cfg.count).into_par_iter().map(|i| generate_one(cfg, i)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixupSpec {
    pub k_max: usize,
    pub l_min: usize,
    pub l_max: usize,
    pub alpha: f64,
}

impl Default for MixupSpec {
    fn default() -> Self {
        Self {
            k_max: 4,
            l_min: 128,
            l_max: 4096,
            alpha: 1.5,
        }
    }
}

/// `Dirichlet(alpha·1_k)` draw via normalized Gamma variates.
pub fn sample_dirichlet(rng: &mut impl Rng, k: usize, alpha: f64) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive alpha");
    let mut w: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Convex combination of `k` normalized random windows; also returns the
/// mixing weights.
pub fn tsmixup_weighted(base: &[TimeSeries], spec: &MixupSpec, rng: &mut impl Rng) -> Result<(TimeSeries, Vec<f64>)> {
    if spec.k_max == 0 || spec.l_min == 0 || spec.l_min > spec.l_max || !(spec.alpha > 0.0) {
        return Err(Error::Config(format!("invalid mixup spec {spec:?}")));
    }
    let eligible: Vec<&TimeSeries> = base.iter().filter(|s| s.len() >= spec.l_min).collect();
    if eligible.is_empty() {
        return Err(Error::Data(format!("no base series has at least {} steps", spec.l_min)));
    }
    let k = rng.gen_range(1..=spec.k_max);
    let chosen: Vec<&TimeSeries> = (0..k).map(|_| eligible[rng.gen_range(0..eligible.len())]).collect();
    let shortest = chosen.iter().map(|s| s.len()).min().expect("k >= 1");
    let l = rng.gen_range(spec.l_min..=spec.l_max).min(shortest);
    let weights = sample_dirichlet(rng, k, spec.alpha);

    let mut values = vec![0.0; l];
    let mut observed = vec![true; l];
    for (s, &w) in chosen.iter().zip(&weights) {
        let start = rng.gen_range(0..=s.len() - l);
        let seg = s.slice(start, start + l);
        let norm = match zscore_normalize(&seg) {
            Ok((n, _)) => n,
            Err(Error::NoObservedValues) => seg.clone(),
            Err(e) => return Err(e),
        };
        for t in 0..l {
            values[t] += w * norm.values[t];
            observed[t] &= norm.observed[t];
        }
    }
    let mut out = TimeSeries::with_mask("mixup", values, observed)?;
    out.season_period = chosen[0].season_period;
    Ok((out, weights))
}

pub fn tsmixup(base: &[TimeSeries], spec: &MixupSpec, rng: &mut impl Rng) -> Result<TimeSeries> {
    Ok(tsmixup_weighted(base, spec, rng)?.0)
}
