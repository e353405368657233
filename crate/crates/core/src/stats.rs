//! Small statistics toolbox shared by the estimators: running moments,
//! Monte Carlo estimate records, weighted least squares, KS distances,
//! a chi-square goodness-of-fit test and quadrature helpers.

use serde::{Deserialize, Serialize};

use crate::rng::RngStream;

/// Universal return shape of all Monte Carlo estimators: value, standard
/// error, sample count and the RNG stream that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: u64,
    pub seed: u64,
    pub stream_id: u64,
}

impl McEstimate {
    pub fn new(value: f64, stderr: f64, samples: u64, stream: RngStream) -> Self {
        Self {
            value,
            stderr,
            samples,
            seed: stream.seed,
            stream_id: stream.stream_id,
        }
    }

    /// Exact (zero-variance) value, e.g. survival at horizon zero.
    pub fn exact(value: f64, stream: RngStream) -> Self {
        Self::new(value, 0.0, 0, stream)
    }

    /// Standard error of the ratio `self / denom` by the delta method,
    /// treating numerator and denominator as independent.
    pub fn ratio(&self, denom: &McEstimate) -> (f64, f64) {
        let r = self.value / denom.value;
        let rel2 = (self.stderr / self.value).powi(2) + (denom.stderr / denom.value).powi(2);
        (r, r.abs() * rel2.sqrt())
    }
}

/// Welford running mean/variance with min/max tracking.
#[derive(Debug, Clone, Copy, Default)]
pub struct OnlineStats {
    n: u64,
    mean: f64,
    m2: f64,
    min: f64,
    max: f64,
}

impl OnlineStats {
    pub fn add(&mut self, x: f64) {
        self.n += 1;
        if self.n == 1 {
            self.min = x;
            self.max = x;
        } else {
            self.min = self.min.min(x);
            self.max = self.max.max(x);
        }
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Merge two accumulators (parallel reduction).
    pub fn merge(&mut self, other: &OnlineStats) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n1 = self.n as f64;
        let n2 = other.n as f64;
        let d = other.mean - self.mean;
        let n = n1 + n2;
        self.mean += d * n2 / n;
        self.m2 += other.m2 + d * d * n1 * n2 / n;
        self.n += other.n;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
    }

    pub fn count(&self) -> u64 {
        self.n
    }
    pub fn mean(&self) -> f64 {
        self.mean
    }
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }
    pub fn stddev(&self) -> f64 {
        self.variance().sqrt()
    }
    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
    pub fn min(&self) -> f64 {
        self.min
    }
    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn estimate(&self, stream: RngStream) -> McEstimate {
        McEstimate::new(self.mean(), self.stderr(), self.n, stream)
    }
}

/// Binomial proportion estimate with the usual stderr.
pub fn binomial_estimate(hits: u64, n: u64, stream: RngStream) -> McEstimate {
    let p = hits as f64 / n as f64;
    let se = (p * (1.0 - p) / n as f64).sqrt();
    McEstimate::new(p, se, n, stream)
}

/// Straight-line weighted least squares fit `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub intercept_stderr: f64,
    /// Covariance of (slope, intercept).
    pub cov_slope_intercept: f64,
    pub n_points: usize,
}

/// WLS with weights `w_i = 1/sigma_i^2`. Standard errors come from the
/// weight matrix, i.e. they assume the provided sigmas are trustworthy.
pub fn weighted_least_squares(xs: &[f64], ys: &[f64], sigmas: &[f64]) -> Option<LineFit> {
    assert_eq!(xs.len(), ys.len());
    assert_eq!(xs.len(), sigmas.len());
    if xs.len() < 2 {
        return None;
    }
    let mut s = 0.0;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..xs.len() {
        let w = 1.0 / (sigmas[i] * sigmas[i]);
        s += w;
        sx += w * xs[i];
        sy += w * ys[i];
        sxx += w * xs[i] * xs[i];
        sxy += w * xs[i] * ys[i];
    }
    let det = s * sxx - sx * sx;
    if det <= 0.0 || !det.is_finite() {
        return None;
    }
    let slope = (s * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    Some(LineFit {
        slope,
        intercept,
        slope_stderr: (s / det).sqrt(),
        intercept_stderr: (sxx / det).sqrt(),
        cov_slope_intercept: -sx / det,
        n_points: xs.len(),
    })
}

/// Kolmogorov-Smirnov distance between a sample and a reference CDF.
pub fn ks_vs_cdf<F: Fn(f64) -> f64>(sample: &mut [f64], cdf: F) -> f64 {
    sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sample.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sample.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - f).abs());
    }
    d
}

/// KS distance between a weighted sample and a reference CDF. Weights need
/// not be normalized.
pub fn weighted_ks_vs_cdf<F: Fn(f64) -> f64>(values: &[f64], weights: &[f64], cdf: F) -> f64 {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let total: f64 = weights.iter().sum();
    let mut cum = 0.0;
    let mut d = 0.0f64;
    for &i in &idx {
        let f = cdf(values[i]);
        d = d.max((f - cum / total).abs());
        cum += weights[i];
        d = d.max((cum / total - f).abs());
    }
    d
}

/// Two-sample KS distance; the second sample may be weighted.
pub fn weighted_ks_two_sample(a: &[f64], b_values: &[f64], b_weights: &[f64]) -> f64 {
    let mut a_sorted = a.to_vec();
    a_sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let ecdf_b = WeightedEcdf::new(b_values, b_weights);
    let n = a_sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in a_sorted.iter().enumerate() {
        let f = ecdf_b.eval(x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - f).abs());
    }
    d
}

/// Plain two-sample KS distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let w = vec![1.0; b.len()];
    weighted_ks_two_sample(a, b, &w)
}

/// Weighted empirical CDF for repeated evaluation.
pub struct WeightedEcdf {
    values: Vec<f64>,
    cum: Vec<f64>,
}

impl WeightedEcdf {
    pub fn new(values: &[f64], weights: &[f64]) -> Self {
        let mut idx: Vec<usize> = (0..values.len()).collect();
        idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        let mut v = Vec::with_capacity(values.len());
        let mut cum = Vec::with_capacity(values.len());
        let mut acc = 0.0;
        for &i in &idx {
            acc += weights[i];
            v.push(values[i]);
            cum.push(acc);
        }
        let total = acc;
        for c in cum.iter_mut() {
            *c /= total;
        }
        Self { values: v, cum }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self
            .values
            .binary_search_by(|v| v.partial_cmp(&x).unwrap())
        {
            Ok(mut i) => {
                while i + 1 < self.values.len() && self.values[i + 1] <= x {
                    i += 1;
                }
                self.cum[i]
            }
            Err(0) => 0.0,
            Err(i) => self.cum[i - 1],
        }
    }
}

/// Natural log of the gamma function (Lanczos, g=7, n=9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma P(a, x).
pub fn reg_lower_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        // series
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut n = a;
        for _ in 0..500 {
            n += 1.0;
            term *= x / n;
            sum += term;
            if term.abs() < sum.abs() * 1e-15 {
                break;
            }
        }
        (sum.ln() + a * x.ln() - x - ln_gamma(a)).exp()
    } else {
        // continued fraction for Q(a, x)
        let mut b = x + 1.0 - a;
        let mut c = 1e308;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < 1e-290 {
                d = 1e-290;
            }
            c = b + an / c;
            if c.abs() < 1e-290 {
                c = 1e-290;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-15 {
                break;
            }
        }
        let q = (a * x.ln() - x - ln_gamma(a)).exp() * h;
        1.0 - q
    }
}

/// Chi-square upper-tail p-value with `df` degrees of freedom.
pub fn chi_square_pvalue(stat: f64, df: usize) -> f64 {
    1.0 - reg_lower_gamma(df as f64 / 2.0, stat / 2.0)
}

/// Chi-square goodness-of-fit over equal-probability bins.
/// `bin_edges` has B+1 entries; expected counts are n/B each.
pub fn chi_square_equal_bins(sample: &[f64], bin_edges: &[f64]) -> (f64, f64) {
    let bins = bin_edges.len() - 1;
    let mut counts = vec![0u64; bins];
    for &x in sample {
        // linear scan is fine at the bin counts used here
        let mut b = bins - 1;
        for i in 0..bins {
            if x < bin_edges[i + 1] {
                b = i;
                break;
            }
        }
        counts[b] += 1;
    }
    let expected = sample.len() as f64 / bins as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    (stat, chi_square_pvalue(stat, bins - 1))
}

/// Standard normal CDF via erfc (Abramowitz-Stegun 7.1.26 style rational
/// approximation refined with one extra term; absolute error ~1e-7).
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc_scalar(-x / std::f64::consts::SQRT_2)
}

fn erfc_scalar(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let ans = t
        * (-z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587
                                        + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        ans
    } else {
        2.0 - ans
    }
}

/// Hill tail-index estimator on the top `k` order statistics of `data`
/// (positive values expected).
pub fn hill_estimator(data: &[f64], k: usize) -> f64 {
    let mut v: Vec<f64> = data.iter().copied().filter(|x| *x > 0.0).collect();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if k == 0 || k >= v.len() {
        return f64::NAN;
    }
    let x_k = v[k];
    let sum_log: f64 = v[..k].iter().map(|&x| (x / x_k).ln()).sum();
    k as f64 / sum_log
}

/// Adaptive Simpson quadrature. Used mostly as an independent oracle in
/// tests (density normalization, moments).
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1)
                + rec(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    rec(f, a, fa, b, fb, whole, m, fm, tol, 50)
}

/// Effective sample size (sum w)^2 / sum w^2.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 == 0.0 {
        0.0
    } else {
        s * s / s2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn online_stats_matches_direct() {
        let xs = [1.0, 2.0, 4.0, 8.0, 16.0];
        let mut s = OnlineStats::default();
        for &x in &xs {
            s.add(x);
        }
        assert!((s.mean() - 6.2).abs() < 1e-12);
        let var: f64 = xs.iter().map(|x| (x - 6.2) * (x - 6.2)).sum::<f64>() / 4.0;
        assert!((s.variance() - var).abs() < 1e-12);
        assert_eq!(s.min(), 1.0);
        assert_eq!(s.max(), 16.0);
    }

    #[test]
    fn online_stats_merge_equals_sequential() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut a = OnlineStats::default();
        let mut b = OnlineStats::default();
        let mut all = OnlineStats::default();
        for (i, &x) in xs.iter().enumerate() {
            if i % 2 == 0 {
                a.add(x)
            } else {
                b.add(x)
            }
            all.add(x);
        }
        a.merge(&b);
        assert!((a.mean() - all.mean()).abs() < 1e-12);
        assert!((a.variance() - all.variance()).abs() < 1e-12);
    }

    #[test]
    fn wls_recovers_exact_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 2.0 * x).collect();
        let sig = [0.1; 4];
        let fit = weighted_least_squares(&xs, &ys, &sig).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-12);
        assert!((fit.intercept - 3.0).abs() < 1e-12);
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-12);
        assert!((ln_gamma(5.0) - 24.0f64.ln()).abs() < 1e-10);
        assert!((ln_gamma(0.5) - 0.5 * std::f64::consts::PI.ln()).abs() < 1e-10);
    }

    #[test]
    fn chi_square_cdf_sane() {
        // P(chi2_2 <= 2) = 1 - exp(-1)
        let p = reg_lower_gamma(1.0, 1.0);
        assert!((p - (1.0 - (-1.0f64).exp())).abs() < 1e-10);
    }

    #[test]
    fn normal_cdf_symmetry() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-7);
        assert!((normal_cdf(1.96) - 0.975).abs() < 1e-3);
        assert!((normal_cdf(-1.0) + normal_cdf(1.0) - 1.0).abs() < 1e-7);
    }

    #[test]
    fn ks_detects_shift() {
        let a: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        let mut b = a.clone();
        let d = ks_vs_cdf(&mut b, |x| x.clamp(0.0, 1.0));
        assert!(d < 0.01);
        let d_shift = ks_vs_cdf(&mut b.clone(), |x| (x - 0.2).clamp(0.0, 1.0));
        assert!(d_shift > 0.15);
        let _ = a;
    }

    #[test]
    fn weighted_ecdf_matches_plain() {
        let v = [3.0, 1.0, 2.0];
        let w = [1.0, 1.0, 1.0];
        let e = WeightedEcdf::new(&v, &w);
        assert!((e.eval(0.5) - 0.0).abs() < 1e-12);
        assert!((e.eval(1.0) - 1.0 / 3.0).abs() < 1e-12);
        assert!((e.eval(2.5) - 2.0 / 3.0).abs() < 1e-12);
        assert!((e.eval(10.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn simpson_integrates_gaussian() {
        let f = |x: f64| (-x * x / 2.0).exp();
        let v = adaptive_simpson(&f, -8.0, 8.0, 1e-10);
        assert!((v - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-8);
    }

    #[test]
    fn ess_bounds() {
        assert!((effective_sample_size(&[1.0; 10]) - 10.0).abs() < 1e-12);
        let one_heavy = effective_sample_size(&[1.0, 0.0, 0.0]);
        assert!((one_heavy - 1.0).abs() < 1e-12);
    }
}
