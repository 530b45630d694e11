//! Sample statistics and Kolmogorov-Smirnov tests.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d: f64,
    pub p: f64,
}

/// `P{K > lambda}` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn sorted(a: &[f64]) -> Vec<f64> {
    let mut v = a.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Two-sample statistic `D = sup |F_a - F_b|` with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let (x, y) = (sorted(a), sorted(b));
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let lambda = (n * m / (n + m)).sqrt() * d;
    Ok(KsResult {
        d,
        p: kolmogorov_survival(lambda),
    })
}

/// One-sample statistic against a continuous cdf.
pub fn ks_one_sample(a: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    if a.is_empty() {
        return Err(Error::EmptySample);
    }
    let x = sorted(a);
    let n = x.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in x.iter().enumerate() {
        let f = cdf(v);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    Ok(KsResult {
        d,
        p: kolmogorov_survival(n.sqrt() * d),
    })
}

pub fn normal_cdf(x: f64, variance: f64) -> f64 {
    0.5 * erfc(-x / (2.0 * variance).sqrt())
}

/// True iff every successive value is at most the previous one times `1 + slack`.
pub fn trend_verdict(d_values: &[f64], slack: f64) -> Result<bool> {
    if d_values.len() < 2 {
        return Err(Error::param("d_values", "at least two grid points are needed"));
    }
    Ok(d_values.windows(2).all(|w| w[1] <= w[0] * (1.0 + slack)))
}

pub fn strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

/// Quantile by linear interpolation between order statistics.
fn quantile_sorted(x: &[f64], q: f64) -> f64 {
    let pos = q * (x.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    x[lo] + (pos - lo as f64) * (x[hi] - x[lo])
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    quantile_sorted(&sorted(values), 0.5)
}

/// Fraction cut from each end for the trimmed mean.
pub const TRIM: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub abs_mean: f64,
    pub trimmed_mean: f64,
    pub trimmed_variance: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub skewness: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Summary> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        let n = values.len();
        let nf = n as f64;
        let mean = values.iter().sum::<f64>() / nf;
        let (mut m2, mut m3) = (0.0, 0.0);
        for &v in values {
            let d = v - mean;
            m2 += d * d;
            m3 += d * d * d;
        }
        let variance = if n > 1 { m2 / (nf - 1.0) } else { 0.0 };
        let skewness = if m2 > 0.0 { (m3 / nf) / (m2 / nf).powf(1.5) } else { 0.0 };
        let x = sorted(values);
        let cut = (TRIM * nf).floor() as usize;
        let core = &x[cut..n - cut];
        let tm = core.iter().sum::<f64>() / core.len() as f64;
        let tv = if core.len() > 1 {
            core.iter().map(|v| (v - tm).powi(2)).sum::<f64>() / (core.len() - 1) as f64
        } else {
            0.0
        };
        Ok(Summary {
            n,
            mean,
            variance,
            abs_mean: values.iter().map(|v| v.abs()).sum::<f64>() / nf,
            trimmed_mean: tm,
            trimmed_variance: tv,
            median: quantile_sorted(&x, 0.5),
            q25: quantile_sorted(&x, 0.25),
            q75: quantile_sorted(&x, 0.75),
            skewness,
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q75 - self.q25
    }
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut r = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Rank correlation; defined for heavy-tailed samples.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ks_examples() {
        let a = [3.0, 1.0, 2.0];
        assert_eq!(ks_two_sample(&a, &a).unwrap().d, 0.0);
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[1.5, 2.5]).unwrap().d, 0.5);
        let b: Vec<f64> = a.iter().map(|x| x + 1e6).collect();
        assert_eq!(ks_two_sample(&a, &b).unwrap().d, 1.0);
        assert!(ks_two_sample(&[], &a).is_err());
        assert!(ks_one_sample(&[], |x| x).is_err());
    }

    #[test]
    fn ks_ties() {
        let a = [1.0, 1.0, 2.0, 2.0];
        let b = [1.0, 2.0];
        assert_eq!(ks_two_sample(&a, &b).unwrap().d, 0.0);
    }

    #[test]
    fn kolmogorov_reference_values() {
        // P{K > 1.36} = 0.0494, P{K > 1.63} = 0.0098
        assert_relative_eq!(kolmogorov_survival(1.36), 0.0494, epsilon = 2e-4);
        assert_relative_eq!(kolmogorov_survival(1.63), 0.0098, epsilon = 2e-4);
        assert_eq!(kolmogorov_survival(0.0), 1.0);
    }

    #[test]
    fn one_sample_uniform_grid() {
        let a: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        let r = ks_one_sample(&a, |x| x.clamp(0.0, 1.0)).unwrap();
        assert_relative_eq!(r.d, 0.005, epsilon = 1e-12);
    }

    #[test]
    fn trend_examples() {
        assert!(trend_verdict(&[0.3, 0.2, 0.12], 0.15).unwrap());
        assert!(!trend_verdict(&[0.1, 0.3], 0.15).unwrap());
        assert!(trend_verdict(&[0.10, 0.11], 0.15).unwrap());
        assert!(trend_verdict(&[0.1], 0.15).is_err());
    }

    #[test]
    fn summary_values() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert_relative_eq!(s.variance, 5.0 / 3.0, epsilon = 1e-12);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.q25, 1.75);
        assert_eq!(s.skewness, 0.0);
        assert_relative_eq!(normal_cdf(0.0, 2.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(normal_cdf(1.0, 1.0), 0.841_344_746, epsilon = 1e-8);
    }

    #[test]
    fn rank_correlation() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [10.0, 20.0, 1000.0, 1e9];
        assert_relative_eq!(spearman(&a, &b), 1.0, epsilon = 1e-12);
        assert!(pearson(&a, &b) < 1.0);
    }
}
