//! Sample statistics used by the Monte Carlo estimators and the
//! goodness-of-fit reports.

use serde::Serialize;

/// Mean, unbiased variance and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Summary {
        let n = xs.len();
        if n == 0 {
            return Summary { count: 0, mean: f64::NAN, variance: f64::NAN, std_error: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let variance = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            f64::NAN
        };
        Summary { count: n, mean, variance, std_error: (variance / n as f64).sqrt() }
    }

    /// Standard error of the unbiased sample variance, from the fourth
    /// central moment: `sqrt((m4 - s^4 (n-3)/(n-1)) / n)`.
    pub fn variance_std_error(xs: &[f64]) -> f64 {
        let s = Summary::of(xs);
        let n = s.count as f64;
        let m4 = xs.iter().map(|x| (x - s.mean).powi(4)).sum::<f64>() / n;
        ((m4 - s.variance * s.variance * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt()
    }
}

/// Running mean of positive quantities supplied as logarithms.
///
/// Keeps `Σ e^{l - max}` and `Σ e^{2(l - max)}`, rescaling when a new
/// maximum arrives, so products of hundreds of factors can be averaged
/// without overflow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogMeanAccumulator {
    max: f64,
    s1: f64,
    s2: f64,
    count: u64,
}

/// A mean in log form together with its relative standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogMean {
    pub log_mean: f64,
    /// Standard error divided by the mean.
    pub rel_std_error: f64,
    pub count: u64,
}

impl LogMean {
    pub fn estimate(&self) -> f64 {
        self.log_mean.exp()
    }

    pub fn std_error(&self) -> f64 {
        self.log_mean.exp() * self.rel_std_error
    }
}

impl Default for LogMeanAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

impl LogMeanAccumulator {
    pub fn new() -> Self {
        LogMeanAccumulator { max: f64::NEG_INFINITY, s1: 0.0, s2: 0.0, count: 0 }
    }

    /// Adds one observation `e^{log_value}`; `-inf` stands for an exact zero.
    pub fn push(&mut self, log_value: f64) {
        self.count += 1;
        if log_value == f64::NEG_INFINITY {
            return;
        }
        if log_value > self.max {
            let scale = (self.max - log_value).exp();
            self.s1 *= scale;
            self.s2 *= scale * scale;
            self.max = log_value;
        }
        let w = (log_value - self.max).exp();
        self.s1 += w;
        self.s2 += w * w;
    }

    pub fn merge(&mut self, other: &LogMeanAccumulator) {
        if other.max > self.max {
            let scale = (self.max - other.max).exp();
            self.s1 = self.s1 * scale + other.s1;
            self.s2 = self.s2 * scale * scale + other.s2;
            self.max = other.max;
        } else if other.max > f64::NEG_INFINITY {
            let scale = (other.max - self.max).exp();
            self.s1 += other.s1 * scale;
            self.s2 += other.s2 * scale * scale;
        }
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn finish(&self) -> LogMean {
        let n = self.count as f64;
        if self.count == 0 || self.s1 == 0.0 {
            return LogMean { log_mean: f64::NEG_INFINITY, rel_std_error: f64::NAN, count: self.count };
        }
        let mean = self.s1 / n;
        let var = if self.count > 1 { ((self.s2 / n - mean * mean) * n / (n - 1.0)).max(0.0) } else { f64::NAN };
        LogMean {
            log_mean: self.max + mean.ln(),
            rel_std_error: (var / n).sqrt() / mean,
            count: self.count,
        }
    }
}

/// Adds `log(e^a + e^b)` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Kolmogorov-Smirnov distance between the empirical CDF of `sample` and the
/// continuous CDF `cdf`. The sample need not be sorted.
pub fn ks_distance<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0_f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    })
}

/// Asymptotic p-value of the one-sample KS statistic `d` at sample size `n`
/// (Kolmogorov series with Stephens' small-sample correction).
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = sign * (-2.0 * (k as f64 * lambda).powi(2)).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Pearson correlation of paired samples.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let sx = Summary::of(x);
    let sy = Summary::of(y);
    let n = x.len() as f64;
    let cov = x.iter().zip(y).map(|(a, b)| (a - sx.mean) * (b - sy.mean)).sum::<f64>() / (n - 1.0);
    cov / (sx.variance * sy.variance).sqrt()
}

/// Least-squares slope of `y` on `x` and its standard error.
pub fn regression_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let sx = Summary::of(x);
    let sy = Summary::of(y);
    let sxx: f64 = x.iter().map(|a| (a - sx.mean).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - sx.mean) * (b - sy.mean)).sum();
    let slope = sxy / sxx;
    let intercept = sy.mean - slope * sx.mean;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let se = (rss / (n - 2.0) / sxx).sqrt();
    (slope, se)
}

/// Median of a sample (average of the two central order statistics).
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

/// Standard error of the sample median from a kernel-free estimate: the
/// asymptotic `1/(2 f(m) sqrt(n))` with the density at the median estimated
/// from the spacing of the central order statistics.
pub fn median_std_error(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n < 10 {
        return f64::NAN;
    }
    let k = ((n as f64).sqrt().ceil() as usize).max(1);
    let lo = v[(n / 2).saturating_sub(k)];
    let hi = v[(n / 2 + k).min(n - 1)];
    // (hi - lo) covers a probability mass of about 2k/n.
    let density = (2 * k) as f64 / n as f64 / (hi - lo);
    1.0 / (2.0 * density * (n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn summary_of_small_sample() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.variance - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ks_distance_of_uniform_grid() {
        let xs: Vec<f64> = (0..10).map(|i| (i as f64 + 0.5) / 10.0).collect();
        let d = ks_distance(&xs, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.05).abs() < 1e-12);
        assert!(ks_p_value(d, 10) > 0.99);
        assert!(ks_p_value(0.5, 1000) < 1e-10);
    }

    #[test]
    fn regression_recovers_slope() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|x| 3.0 * x - 1.0).collect();
        let (s, se) = regression_slope(&x, &y);
        assert!((s - 3.0).abs() < 1e-12);
        assert!(se < 1e-10);
    }

    proptest! {
        #[test]
        fn log_mean_matches_direct_mean(values in prop::collection::vec(0.01f64..100.0, 2..40), split in 0usize..40) {
            let direct = Summary::of(&values);
            let mut acc = LogMeanAccumulator::new();
            let k = split.min(values.len());
            let mut other = LogMeanAccumulator::new();
            for v in &values[..k] { acc.push(v.ln()); }
            for v in &values[k..] { other.push(v.ln()); }
            acc.merge(&other);
            let lm = acc.finish();
            prop_assert!((lm.estimate() - direct.mean).abs() <= 1e-10 * direct.mean);
            prop_assert!((lm.std_error() - direct.std_error).abs() <= 1e-8 * direct.mean);
        }
    }
}
