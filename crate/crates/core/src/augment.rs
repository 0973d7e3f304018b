// SPDX-License-Identifier: MIT OR Apache-2.0

//! Training-time series augmentations: amplitude modulation, censoring and
//! periodic spike injection. All of them act on observed values only and keep
//! the series length and observation mask.

use std::collections::BTreeMap;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::TimeSeries;

/// Per-augmentation application probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub p_amplitude: f64,
    pub p_censor: f64,
    pub p_spike: f64,
    /// Upper bound of the changepoint count for amplitude modulation.
    pub max_changepoints: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_amplitude: 0.5,
            p_censor: 0.5,
            p_spike: 0.05,
            max_changepoints: 5,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            p_amplitude: 0.0,
            p_censor: 0.0,
            p_spike: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_amplitude", self.p_amplitude),
            ("p_censor", self.p_censor),
            ("p_spike", self.p_spike),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("augment.{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

/// Which augmentations fired for one sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AugmentationTrace {
    pub amplitude: bool,
    pub censor: bool,
    pub spike: bool,
}

/// Piecewise-linear interpolation through `(anchors[i], amplitudes[i])`,
/// evaluated at `0..t_len`. Anchors must be strictly increasing, start at 0
/// and end at `t_len - 1`.
pub fn piecewise_linear_trend(t_len: usize, anchors: &[usize], amplitudes: &[f64]) -> Vec<f64> {
    debug_assert_eq!(anchors.len(), amplitudes.len());
    if anchors.len() == 1 {
        return vec![amplitudes[0]; t_len];
    }
    let mut out = Vec::with_capacity(t_len);
    let mut seg = 0;
    for t in 0..t_len {
        while seg + 2 < anchors.len() && t > anchors[seg + 1] {
            seg += 1;
        }
        let (x0, x1) = (anchors[seg] as f64, anchors[seg + 1] as f64);
        let (a0, a1) = (amplitudes[seg], amplitudes[seg + 1]);
        let frac = (t as f64 - x0) / (x1 - x0);
        out.push(a0 + (a1 - a0) * frac);
    }
    out
}

/// Multiplies the series by a random piecewise-linear trend with up to
/// `max_changepoints` interior changepoints and `N(1, 1)` anchor amplitudes.
pub fn amplitude_modulation(series: &TimeSeries, max_changepoints: usize, rng: &mut impl Rng) -> TimeSeries {
    let t_len = series.len();
    if t_len < 2 {
        return series.clone();
    }
    let k = rng.gen_range(0..=max_changepoints).min(t_len - 2);
    let mut cps: Vec<usize> = sample_indices(rng, t_len - 2, k).into_iter().map(|i| i + 1).collect();
    cps.sort_unstable();
    let mut anchors = Vec::with_capacity(k + 2);
    anchors.push(0);
    anchors.extend(cps);
    anchors.push(t_len - 1);
    let normal = Normal::new(1.0, 1.0).expect("valid normal");
    let amplitudes: Vec<f64> = (0..anchors.len()).map(|_| normal.sample(rng)).collect();
    modulate(series, &anchors, &amplitudes)
}

/// Deterministic core of [`amplitude_modulation`].
pub fn modulate(series: &TimeSeries, anchors: &[usize], amplitudes: &[f64]) -> TimeSeries {
    let trend = piecewise_linear_trend(series.len(), anchors, amplitudes);
    series.map_observed(|t, v| v * trend[t])
}

/// Linear-interpolation empirical quantile of `sorted` (ascending, non-empty).
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Clips observed values at the empirical `q`-quantile: from below
/// (`max(y, c)`) when `bottom`, otherwise from above.
pub fn censor_at(series: &TimeSeries, q: f64, bottom: bool) -> TimeSeries {
    let mut sorted: Vec<f64> = series.observed_values().collect();
    if sorted.is_empty() {
        return series.clone();
    }
    sorted.sort_by(f64::total_cmp);
    let c = empirical_quantile(&sorted, q);
    series.map_observed(|_, v| if bottom { v.max(c) } else { v.min(c) })
}

pub fn censor(series: &TimeSeries, rng: &mut impl Rng) -> TimeSeries {
    let q: f64 = rng.gen();
    let bottom = rng.gen_bool(0.5);
    censor_at(series, q, bottom)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    Tophat,
    Rbf,
    Linear,
}

/// Shape of one spike: `width` is the full width `w` for tophat/linear and
/// the standard deviation for RBF.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpikeKernelSpec {
    pub kind: KernelKind,
    pub width: f64,
    pub amplitude: f64,
}

impl SpikeKernelSpec {
    /// Kernel value at signed distance `dist` from its center.
    pub fn eval(&self, dist: f64) -> f64 {
        let a = dist.abs();
        match self.kind {
            KernelKind::Tophat => {
                if a <= self.width / 2.0 {
                    self.amplitude
                } else {
                    0.0
                }
            }
            KernelKind::Rbf => self.amplitude * (-0.5 * (a / self.width).powi(2)).exp(),
            KernelKind::Linear => self.amplitude * (1.0 - a / (self.width / 2.0)).max(0.0),
        }
    }

    /// Width and amplitude drawn from `[0.05π, 0.2π]` and `[0.5, 3]`.
    pub fn sample(kind: KernelKind, period: f64, rng: &mut impl Rng) -> Self {
        Self {
            kind,
            width: rng.gen_range(0.05 * period..=0.2 * period),
            amplitude: rng.gen_range(0.5..=3.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatternCategory {
    Simple,
    ThreePeriodic,
    FourPeriodic,
    WeeklyLike,
}

impl PatternCategory {
    pub const ALL: [PatternCategory; 4] = [
        PatternCategory::Simple,
        PatternCategory::ThreePeriodic,
        PatternCategory::FourPeriodic,
        PatternCategory::WeeklyLike,
    ];

    pub fn probability(self) -> f64 {
        match self {
            PatternCategory::Simple => 0.75,
            PatternCategory::ThreePeriodic => 0.10,
            PatternCategory::FourPeriodic => 0.10,
            PatternCategory::WeeklyLike => 0.05,
        }
    }

    pub fn patterns(self) -> &'static [&'static [usize]] {
        match self {
            PatternCategory::Simple => &[&[0], &[0, 1]],
            PatternCategory::ThreePeriodic => &[&[0, 1, 2], &[0, 0, 1]],
            PatternCategory::FourPeriodic => &[&[0, 0, 1, 1], &[0, 1, 0, 2]],
            PatternCategory::WeeklyLike => &[&[0, 0, 0, 0, 0, 1, 1], &[0, 0, 0, 0, 0, 1, 2]],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpikePattern {
    pub labels: Vec<usize>,
    pub category: PatternCategory,
    /// Probability of the pattern's category.
    pub probability: f64,
}

/// Picks a category by its probability, then a pattern uniformly within it.
pub fn sample_pattern(rng: &mut impl Rng) -> SpikePattern {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut category = PatternCategory::WeeklyLike;
    for c in PatternCategory::ALL {
        acc += c.probability();
        if u < acc {
            category = c;
            break;
        }
    }
    let options = category.patterns();
    let labels = options[rng.gen_range(0..options.len())].to_vec();
    SpikePattern {
        labels,
        category,
        probability: category.probability(),
    }
}

/// Concrete spike layout for one series.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikePlan {
    pub period: f64,
    /// `(center, label)` pairs.
    pub anchors: Vec<(f64, usize)>,
    pub kernels: BTreeMap<usize, SpikeKernelSpec>,
}

impl SpikePlan {
    /// Additive signal over `0..t_len`.
    pub fn signal(&self, t_len: usize) -> Vec<f64> {
        let mut out = vec![0.0; t_len];
        for &(center, label) in &self.anchors {
            let k = &self.kernels[&label];
            for (t, v) in out.iter_mut().enumerate() {
                *v += k.eval(t as f64 - center);
            }
        }
        out
    }
}

/// Anchors spaced `period` apart, the last one at `last`, labelled by the
/// pattern read backwards from its final element.
pub fn tile_anchors(last: f64, period: f64, labels: &[usize]) -> Vec<(f64, usize)> {
    let mut anchors = Vec::new();
    let mut j = 0usize;
    loop {
        let pos = last - j as f64 * period;
        if pos < 0.0 {
            break;
        }
        let label = labels[labels.len() - 1 - j % labels.len()];
        anchors.push((pos, label));
        j += 1;
    }
    anchors.reverse();
    anchors
}

/// Samples a spike layout for a series of length `t_len`; `None` when the
/// series is too short for the periodicity range.
pub fn sample_spike_plan(t_len: usize, rng: &mut impl Rng) -> Option<SpikePlan> {
    let upper = t_len.min(512) as f64;
    if upper <= 10.0 {
        return None;
    }
    let period = rng.gen_range(10.0..upper);
    let mut labels = sample_pattern(rng).labels;
    let shift = rng.gen_range(0..labels.len());
    labels.rotate_left(shift);
    let s = rng.gen_range(t_len as f64 - period..t_len as f64);
    let anchors = tile_anchors(s.floor(), period, &labels);
    let kind = match rng.gen_range(0..3) {
        0 => KernelKind::Tophat,
        1 => KernelKind::Rbf,
        _ => KernelKind::Linear,
    };
    let mut kernels = BTreeMap::new();
    for &l in &labels {
        kernels.entry(l).or_insert_with(|| SpikeKernelSpec::sample(kind, period, rng));
    }
    Some(SpikePlan {
        period,
        anchors,
        kernels,
    })
}

pub fn spike_injection(series: &TimeSeries, rng: &mut impl Rng) -> TimeSeries {
    match sample_spike_plan(series.len(), rng) {
        Some(plan) => {
            let signal = plan.signal(series.len());
            series.map_observed(|t, v| v + signal[t])
        }
        None => series.clone(),
    }
}

/// Gates each augmentation independently and applies them in the order
/// amplitude modulation, censoring, spike injection.
pub fn apply_training_augmentations(
    series: &TimeSeries,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> (TimeSeries, AugmentationTrace) {
    let mut trace = AugmentationTrace::default();
    let mut out = series.clone();
    if cfg.p_amplitude > 0.0 && rng.gen_bool(cfg.p_amplitude) {
        trace.amplitude = true;
        out = amplitude_modulation(&out, cfg.max_changepoints, rng);
    }
    if cfg.p_censor > 0.0 && rng.gen_bool(cfg.p_censor) {
        trace.censor = true;
        out = censor(&out, rng);
    }
    if cfg.p_spike > 0.0 && rng.gen_bool(cfg.p_spike) {
        trace.spike = true;
        out = spike_injection(&out, rng);
    }
    (out, trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(n: usize) -> TimeSeries {
        TimeSeries::new("r", (0..n).map(|v| v as f64 - 3.0).collect())
    }

    #[test]
    fn unit_trend_is_identity() {
        let s = ramp(9);
        assert_eq!(modulate(&s, &[0, 8], &[1.0, 1.0]), s);
    }

    #[test]
    fn two_anchor_trend_is_linear() {
        let s = ramp(11);
        let (a0, a1) = (0.3, 2.5);
        let out = modulate(&s, &[0, 10], &[a0, a1]);
        for t in 0..11 {
            let expect = s.values[t] * (a0 + (a1 - a0) * t as f64 / 10.0);
            assert!((out.values[t] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn trend_hits_anchor_amplitudes() {
        let anchors = [0, 3, 4, 9];
        let amps = [0.5, -1.0, 2.0, 1.5];
        let trend = piecewise_linear_trend(10, &anchors, &amps);
        for (a, v) in anchors.iter().zip(amps) {
            assert_eq!(trend[*a], v);
        }
    }

    #[test]
    fn modulation_preserves_zeros_and_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = TimeSeries::with_mask("z", vec![0.0, 1.0, 0.0, 2.0, 5.0], vec![true, true, true, false, true]).unwrap();
        for _ in 0..50 {
            let out = amplitude_modulation(&s, 5, &mut rng);
            assert_eq!(out.values[0], 0.0);
            assert_eq!(out.values[2], 0.0);
            assert_eq!(out.values[3], 0.0);
            assert_eq!(out.observed, s.observed);
        }
    }

    #[test]
    fn censor_examples() {
        let s = TimeSeries::new("c", vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(censor_at(&s, 0.0, true), s);
        assert_eq!(censor_at(&s, 1.0, false), s);
        assert_eq!(censor_at(&s, 0.5, true).values, vec![2.5, 2.5, 3.0, 4.0]);
        assert_eq!(censor_at(&s, 0.5, false).values, vec![1.0, 2.0, 2.5, 2.5]);
    }

    #[test]
    fn tophat_support() {
        let plan = SpikePlan {
            period: 20.0,
            anchors: vec![(10.0, 0)],
            kernels: BTreeMap::from([(
                0,
                SpikeKernelSpec {
                    kind: KernelKind::Tophat,
                    width: 4.0,
                    amplitude: 2.0,
                },
            )]),
        };
        let sig = plan.signal(20);
        for (t, v) in sig.iter().enumerate() {
            let inside = (8..=12).contains(&t);
            assert_eq!(*v, if inside { 2.0 } else { 0.0 });
        }
    }

    #[test]
    fn rbf_closed_form() {
        let k = SpikeKernelSpec {
            kind: KernelKind::Rbf,
            width: 3.0,
            amplitude: 1.7,
        };
        assert_eq!(k.eval(0.0), 1.7);
        assert!((k.eval(3.0) - 1.7 * (-0.5f64).exp()).abs() < 1e-15);
        let lin = SpikeKernelSpec {
            kind: KernelKind::Linear,
            width: 4.0,
            amplitude: 2.0,
        };
        assert_eq!(lin.eval(1.0), 1.0);
        assert_eq!(lin.eval(2.5), 0.0);
    }

    #[test]
    fn tiling_alternates_labels() {
        let anchors = tile_anchors(45.0, 10.0, &[0, 1]);
        let pos: Vec<f64> = anchors.iter().map(|a| a.0).collect();
        assert_eq!(pos, vec![5.0, 15.0, 25.0, 35.0, 45.0]);
        let labels: Vec<usize> = anchors.iter().map(|a| a.1).collect();
        assert_eq!(labels, vec![1, 0, 1, 0, 1]);
    }

    #[test]
    fn pattern_table_probabilities() {
        let total: f64 = PatternCategory::ALL.iter().map(|c| c.probability()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 20_000;
        let simple = (0..n)
            .filter(|_| sample_pattern(&mut rng).category == PatternCategory::Simple)
            .count() as f64;
        let sigma = (n as f64 * 0.75 * 0.25).sqrt();
        assert!((simple - 0.75 * n as f64).abs() < 3.0 * sigma);
    }

    #[test]
    fn spike_skips_short_series_and_keeps_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let short = ramp(10);
        assert_eq!(spike_injection(&short, &mut rng), short);
        let s = TimeSeries::with_mask("s", vec![1.0; 64], (0..64).map(|t| t % 5 != 0).collect()).unwrap();
        for _ in 0..20 {
            let out = spike_injection(&s, &mut rng);
            assert_eq!(out.observed, s.observed);
            assert!(out.values.iter().zip(&s.values).all(|(a, b)| a >= b));
            assert!((0..64).step_by(5).all(|t| out.values[t] == 0.0));
        }
    }

    #[test]
    fn sampled_widths_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let plan = sample_spike_plan(300, &mut rng).unwrap();
            assert!(plan.period >= 10.0 && plan.period < 300.0);
            let last = plan.anchors.last().unwrap().0;
            assert!(last >= 300.0 - plan.period - 1.0 && last < 300.0);
            for k in plan.kernels.values() {
                assert!(k.width >= 0.05 * plan.period && k.width <= 0.2 * plan.period);
                assert!((0.5..=3.0).contains(&k.amplitude));
            }
        }
    }

    #[test]
    fn gates_off_is_identity_and_seeded_runs_repeat() {
        let s = TimeSeries::new("g", (0..100).map(|t| (t as f64 * 0.3).sin()).collect());
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (out, trace) = apply_training_augmentations(&s, &AugmentConfig::disabled(), &mut rng);
        assert_eq!(out, s);
        assert_eq!(trace, AugmentationTrace::default());

        let cfg = AugmentConfig {
            p_spike: 1.0,
            ..AugmentConfig::default()
        };
        let a = apply_training_augmentations(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(11));
        let b = apply_training_augmentations(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
    }
}
