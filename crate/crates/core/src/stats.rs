//! Small statistics toolkit for frequency tests and trial summaries.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for a binomial proportion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilsonInterval {
    pub estimate: f64,
    pub low: f64,
    pub high: f64,
    pub halfwidth: f64,
}

pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> WilsonInterval {
    if trials == 0 {
        return WilsonInterval {
            estimate: 0.0,
            low: 0.0,
            high: 1.0,
            halfwidth: 0.5,
        };
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    WilsonInterval {
        estimate: p,
        low: if successes == 0 { 0.0 } else { (center - half).max(0.0) },
        high: if successes == trials { 1.0 } else { (center + half).min(1.0) },
        halfwidth: half,
    }
}

/// Observed frequency of a named event with its Wilson interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frequency {
    pub event: String,
    pub successes: u64,
    pub trials: u64,
    pub rate: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
}

impl Frequency {
    pub fn new(event: impl Into<String>, successes: u64, trials: u64) -> Self {
        let w = wilson_interval(successes, trials, Z95);
        Frequency {
            event: event.into(),
            successes,
            trials,
            rate: w.estimate,
            wilson_low: w.low,
            wilson_high: w.high,
        }
    }
}

/// Five-number summary (min, quartiles, max) with linear interpolation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl Quantiles {
    pub fn iqr(&self) -> f64 {
        self.q75 - self.q25
    }
}

pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Returns `None` for an empty sample or one containing NaN.
pub fn quantiles(values: &[f64]) -> Option<Quantiles> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Some(Quantiles {
        min: sorted[0],
        q25: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q75: quantile_sorted(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
    })
}

/// Pearson chi-square against equal expected counts. Returns (statistic, p-value).
pub fn chi_square_uniform(observed: &[u64]) -> (f64, f64) {
    let k = observed.len();
    let total: u64 = observed.iter().sum();
    let expected = total as f64 / k as f64;
    let stat: f64 = observed
        .iter()
        .map(|&o| {
            let diff = o as f64 - expected;
            diff * diff / expected
        })
        .sum();
    let dist = ChiSquared::new((k - 1) as f64).expect("k >= 2");
    (stat, 1.0 - dist.cdf(stat))
}

/// One-sample Kolmogorov–Smirnov statistic for sorted data against `cdf`.
pub fn ks_statistic_sorted(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            let above = (i + 1) as f64 / n - f;
            let below = f - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic Kolmogorov tail probability with the Stephens small-sample
/// correction; `effective_n` is `n` for one sample, `nm/(n+m)` for two.
pub fn kolmogorov_p_value(d: f64, effective_n: usize) -> f64 {
    let en = (effective_n as f64).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = 2.0 * (-1f64).powi(j - 1) * (-2.0 * jf * jf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Two-sample KS test. Returns (D, approximate p-value).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.total_cmp(q));
    ys.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = xs[i].min(ys[j]);
        while i < n && xs[i] <= v {
            i += 1;
        }
        while j < m && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = (n * m) / (n + m).max(1);
    (d, kolmogorov_p_value(d, en.max(1)))
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}
