//! Hypothesis tests and interval estimates used by the probe reports:
//! Spearman's rho, Kendall's tau-a, the exact Wilcoxon signed-rank test,
//! the paired t-test and t-based confidence intervals.
//!
//! The t distribution CDF is implemented in-module via the regularized
//! incomplete beta function, so the crate carries no numerical dependency.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which procedure produced a [`TestResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SpearmanT,
    SpearmanPermutation,
    KendallTauA,
    WilcoxonExact,
    WilcoxonNormalApprox,
    PairedT,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: Method,
    pub n: usize,
}

impl TestResult {
    fn new(statistic: f64, p_value: f64, method: Method, n: usize) -> Self {
        debug_assert!((0.0..=1.0).contains(&p_value), "p={p_value}");
        TestResult {
            statistic,
            p_value,
            method,
            n,
        }
    }
}

// ---------------------------------------------------------------------------
// t distribution via the regularized incomplete beta function
// ---------------------------------------------------------------------------

fn ln_gamma(x: f64) -> f64 {
    // Lanczos, g = 7, n = 9
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta function (Lentz's method).
fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_IT: usize = 300;
    const EPS: f64 = 3e-16;
    const FPMIN: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_IT {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
fn betai(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let bt = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        bt * betacf(a, b, x) / a
    } else {
        1.0 - bt * betacf(b, a, 1.0 - x) / b
    }
}

/// Two-sided p-value for a t statistic with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: usize) -> f64 {
    let df = df as f64;
    betai(0.5 * df, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Upper 0.975 quantile of the t distribution (for 95% intervals), found by
/// bisection on the monotone CDF.
pub fn t_quantile_975(df: usize) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1e3f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        // quantile is where the two-sided p crosses 0.05
        if t_two_sided_p(mid, df) > 0.05 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

// ---------------------------------------------------------------------------
// Ranks
// ---------------------------------------------------------------------------

/// Average ranks (1-based), ties share the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn is_constant(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] == w[1])
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

// ---------------------------------------------------------------------------
// Rank correlations
// ---------------------------------------------------------------------------

/// Spearman's rho with a two-sided p from the t approximation
/// t = rho * sqrt((n-2) / (1-rho^2)), df = n-2. rho = +/-1 returns p = 0.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<TestResult> {
    validate_pair(x, y, 4)?;
    let mut rho = pearson(&average_ranks(x), &average_ranks(y));
    // perfect rank agreement should be exactly +/-1 despite sqrt rounding
    if 1.0 - rho.abs() < 1e-12 {
        rho = rho.signum();
    }
    let n = x.len();
    let p = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * ((n as f64 - 2.0) / (1.0 - rho * rho)).sqrt();
        t_two_sided_p(t, n - 2)
    };
    Ok(TestResult::new(rho, p, Method::SpearmanT, n))
}

/// Exact permutation two-sided p-value for Spearman's rho (n <= 10):
/// the fraction of permutations of y whose |rho| >= |observed rho|.
pub fn spearman_permutation_p(x: &[f64], y: &[f64]) -> Result<TestResult> {
    validate_pair(x, y, 4)?;
    let n = x.len();
    if n > 10 {
        return Err(Error::TooFewSamples { need: 10, got: n });
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let observed = pearson(&rx, &ry);

    let mut perm: Vec<usize> = (0..n).collect();
    let mut count = 0usize;
    let mut total = 0usize;
    let mut buf = vec![0.0; n];
    let eval = |perm: &[usize], buf: &mut [f64]| {
        for (i, &p) in perm.iter().enumerate() {
            buf[i] = ry[p];
        }
        let r = pearson(&rx, buf);
        usize::from(r.abs() >= observed.abs() - 1e-12)
    };
    // Heap's algorithm, iterative
    count += eval(&perm, &mut buf);
    total += 1;
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            count += eval(&perm, &mut buf);
            total += 1;
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(TestResult::new(
        observed,
        count as f64 / total as f64,
        Method::SpearmanPermutation,
        n,
    ))
}

/// Kendall's tau-a: (concordant - discordant) / (n(n-1)/2). Ties count for
/// neither side. Two-sided p via the normal approximation of tau.
pub fn kendall(x: &[f64], y: &[f64]) -> Result<TestResult> {
    validate_pair(x, y, 4)?;
    let n = x.len();
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            let s = (x[i] - x[j]) * (y[i] - y[j]);
            if s > 0.0 {
                concordant += 1;
            } else if s < 0.0 {
                discordant += 1;
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let tau = (concordant - discordant) as f64 / pairs;
    // var(tau) under H0 = 2(2n+5) / (9n(n-1))
    let nf = n as f64;
    let z = 3.0 * tau * (nf * (nf - 1.0)).sqrt() / (2.0 * (2.0 * nf + 5.0)).sqrt();
    let p = 2.0 * (1.0 - std_normal_cdf(z.abs()));
    Ok(TestResult::new(
        tau,
        p.clamp(0.0, 1.0),
        Method::KendallTauA,
        n,
    ))
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn erfc(x: f64) -> f64 {
    // rational Chebyshev fit, |err| < 1.2e-7; adequate for approximate p's
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let ans = t
        * (-z * z - 1.265_512_23
            + t * (1.000_023_68
                + t * (0.374_091_96
                    + t * (0.096_784_18
                        + t * (-0.186_288_06
                            + t * (0.278_868_07
                                + t * (-1.135_203_98
                                    + t * (1.488_515_87
                                        + t * (-0.822_152_23 + t * 0.170_872_77)))))))))
            .exp();
    if x >= 0.0 {
        ans
    } else {
        2.0 - ans
    }
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank
// ---------------------------------------------------------------------------

const WILCOXON_EXACT_MAX: usize = 20;

/// Wilcoxon signed-rank test on paired differences.
///
/// Zero differences are dropped. For n <= 20 the two-sided p is exact:
/// p = min(1, 2 * P(S <= min(W+, W-))) with S the positive-rank sum,
/// enumerated over all 2^n sign assignments. Larger n falls back to the
/// normal approximation with continuity correction (flagged in `method`).
pub fn wilcoxon_signed_rank(differences: &[f64]) -> Result<TestResult> {
    if !differences.is_empty() && differences.iter().all(|&x| x == 0.0) {
        return Err(Error::AllZero);
    }
    let d: Vec<f64> = differences.iter().copied().filter(|&x| x != 0.0).collect();
    if d.len() < 3 {
        return Err(Error::TooFewSamples {
            need: 3,
            got: d.len(),
        });
    }
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = d
        .iter()
        .zip(&ranks)
        .filter(|(x, _)| **x > 0.0)
        .map(|(_, r)| *r)
        .sum();
    let total: f64 = ranks.iter().sum();
    let w_minus = total - w_plus;
    let w = w_plus.min(w_minus);

    if n <= WILCOXON_EXACT_MAX {
        let mut at_most = 0u64;
        let assignments = 1u64 << n;
        for mask in 0..assignments {
            let mut s = 0.0;
            for (i, r) in ranks.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    s += r;
                }
            }
            if s <= w + 1e-9 {
                at_most += 1;
            }
        }
        let p = (2.0 * at_most as f64 / assignments as f64).min(1.0);
        Ok(TestResult::new(w, p, Method::WilcoxonExact, n))
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let sd = (nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0).sqrt();
        let z = (w - mean + 0.5) / sd; // w <= mean by construction
        let p = (2.0 * std_normal_cdf(z)).min(1.0);
        Ok(TestResult::new(w, p, Method::WilcoxonNormalApprox, n))
    }
}

// ---------------------------------------------------------------------------
// Paired t-test and confidence intervals
// ---------------------------------------------------------------------------

/// Paired t-test on differences: t = mean / (sd / sqrt(n)), df = n-1.
pub fn paired_t(differences: &[f64]) -> Result<TestResult> {
    let n = differences.len();
    if n < 2 {
        return Err(Error::TooFewSamples { need: 2, got: n });
    }
    let mean = differences.iter().sum::<f64>() / n as f64;
    let var = differences
        .iter()
        .map(|d| (d - mean) * (d - mean))
        .sum::<f64>()
        / (n as f64 - 1.0);
    if var == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let p = t_two_sided_p(t, n - 1);
    Ok(TestResult::new(t, p, Method::PairedT, n))
}

/// Sample mean with 95% half-width: t_{0.975, n-1} * sd / sqrt(n).
pub fn mean_ci95(samples: &[f64]) -> Result<(f64, f64)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::TooFewSamples { need: 2, got: n });
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
    let half = t_quantile_975(n - 1) * var.sqrt() / (n as f64).sqrt();
    Ok((mean, half))
}

fn validate_pair(x: &[f64], y: &[f64], min_n: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            what: "rank correlation inputs",
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < min_n {
        return Err(Error::TooFewSamples {
            need: min_n,
            got: x.len(),
        });
    }
    if is_constant(x) || is_constant(y) {
        return Err(Error::ConstantInput);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{lane, std_normal, stream};

    fn spearman_p_from_rho(rho: f64, n: usize) -> f64 {
        let t = rho * ((n as f64 - 2.0) / (1.0 - rho * rho)).sqrt();
        t_two_sided_p(t, n - 2)
    }

    /// Published rank-correlation rows: the t approximation reproduces the
    /// reported two-sided p-values from the reported rho at n = 10.
    #[test]
    fn spearman_reproduces_published_p_values() {
        let p1 = spearman_p_from_rho(0.648, 10);
        assert!((p1 - 0.043).abs() <= 0.001, "p={p1}");
        let p2 = spearman_p_from_rho(0.467, 10);
        assert!((p2 - 0.174).abs() <= 0.001, "p={p2}");
    }

    #[test]
    fn spearman_monotone_is_one() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [2.0, 4.0, 9.0, 16.5, 100.0];
        let r = spearman(&x, &y).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert_eq!(r.p_value, 0.0);
    }

    #[test]
    fn spearman_constant_errors() {
        let x = [1.0, 1.0, 1.0, 1.0];
        let y = [1.0, 2.0, 3.0, 4.0];
        assert!(matches!(spearman(&x, &y), Err(Error::ConstantInput)));
    }

    #[test]
    fn spearman_invariant_under_monotone_transform() {
        let x = [0.3, 1.9, 0.4, 2.8, 1.1, 0.9];
        let y = [5.0, 3.0, 4.0, 1.0, 2.0, 6.0];
        let a = spearman(&x, &y).unwrap();
        let xt: Vec<f64> = x.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
        let b = spearman(&xt, &y).unwrap();
        assert_eq!(a.statistic, b.statistic);
    }

    #[test]
    fn kendall_identical_rankings() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        let r = kendall(&x, &x).unwrap();
        assert_eq!(r.statistic, 1.0);
    }

    /// One adjacent swap at n = 10 flips exactly one pair: 1 - 2/45.
    #[test]
    fn kendall_one_adjacent_swap() {
        let x: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let mut y = x.clone();
        y.swap(4, 5);
        let r = kendall(&x, &y).unwrap();
        assert!((r.statistic - (1.0 - 2.0 / 45.0)).abs() < 1e-12);
    }

    /// Brute-force pair-counting oracle on a random pair.
    #[test]
    fn kendall_matches_pair_counting_oracle() {
        let mut rng = stream(31, &[lane::INIT]);
        let x: Vec<f64> = (0..10).map(|_| std_normal(&mut rng)).collect();
        let y: Vec<f64> = (0..10).map(|_| std_normal(&mut rng)).collect();
        let r = kendall(&x, &y).unwrap();
        let mut con = 0.0;
        let mut dis = 0.0;
        for i in 0..10 {
            for j in 0..10 {
                if i < j {
                    let dx = x[i] - x[j];
                    let dy = y[i] - y[j];
                    if dx * dy > 0.0 {
                        con += 1.0;
                    }
                    if dx * dy < 0.0 {
                        dis += 1.0;
                    }
                }
            }
        }
        assert_eq!(r.statistic, (con - dis) / 45.0);
    }

    #[test]
    fn kendall_invariant_under_monotone_transform() {
        let x = [0.3, 1.9, 0.4, 2.8, 1.1, 0.9];
        let y = [5.0, 3.0, 4.0, 1.0, 2.0, 6.0];
        let a = kendall(&x, &y).unwrap();
        let yt: Vec<f64> = y.iter().map(|v| v.powi(3) - 2.0).collect();
        let b = kendall(&x, &yt).unwrap();
        assert_eq!(a.statistic, b.statistic);
    }

    /// n = 5, uniform sign: two-sided exact floor 2/2^5 = 0.0625, the
    /// published Wilcoxon p for the 5-epoch masking pairs.
    #[test]
    fn wilcoxon_exact_floor() {
        let r = wilcoxon_signed_rank(&[0.3, 1.2, 0.5, 2.0, 0.7]).unwrap();
        assert_eq!(r.p_value, 0.0625);
        assert_eq!(r.method, Method::WilcoxonExact);
    }

    #[test]
    fn wilcoxon_symmetric_sample_high_p() {
        let r = wilcoxon_signed_rank(&[1.0, -1.0, 2.0, -2.0]).unwrap();
        assert!(r.p_value >= 0.875, "p={}", r.p_value);
    }

    #[test]
    fn wilcoxon_switches_to_normal_approximation() {
        let d: Vec<f64> = (1..=21)
            .map(|i| i as f64 * if i % 3 == 0 { -1.0 } else { 1.0 })
            .collect();
        let r = wilcoxon_signed_rank(&d).unwrap();
        assert_eq!(r.method, Method::WilcoxonNormalApprox);
        assert!(r.p_value > 0.0 && r.p_value <= 1.0);
    }

    #[test]
    fn wilcoxon_all_zero_errors() {
        assert!(matches!(
            wilcoxon_signed_rank(&[0.0, 0.0, 0.0]),
            Err(Error::AllZero)
        ));
    }

    /// Exact enumeration oracle: independent recomputation of the two-sided
    /// p for random samples at n <= 12.
    #[test]
    fn wilcoxon_matches_enumeration_oracle() {
        let mut rng = stream(55, &[lane::INIT]);
        for n in [3usize, 5, 8, 12] {
            let d: Vec<f64> = (0..n).map(|_| std_normal(&mut rng) + 0.2).collect();
            let r = wilcoxon_signed_rank(&d).unwrap();
            let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
            let ranks = average_ranks(&abs);
            let wp: f64 = d
                .iter()
                .zip(&ranks)
                .filter(|(x, _)| **x > 0.0)
                .map(|(_, r)| *r)
                .sum();
            let wm: f64 = ranks.iter().sum::<f64>() - wp;
            let wobs = wp.min(wm);
            let mut count = 0u64;
            for mask in 0..(1u64 << n) {
                let s: f64 = (0..n)
                    .filter(|i| mask >> i & 1 == 1)
                    .map(|i| ranks[i])
                    .sum();
                if s <= wobs + 1e-9 {
                    count += 1;
                }
            }
            let p = (2.0 * count as f64 / (1u64 << n) as f64).min(1.0);
            assert_eq!(r.p_value, p, "n={n}");
        }
    }

    #[test]
    fn paired_t_zero_mean() {
        let r = paired_t(&[1.5, -1.5, 0.25, -0.25]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn paired_t_degenerate_errors() {
        assert!(matches!(
            paired_t(&[1.0, 1.0, 1.0, 1.0]),
            Err(Error::ZeroVariance)
        ));
    }

    /// t-table oracle: published two-sided 5% critical values.
    #[test]
    fn t_cdf_matches_reference_values() {
        assert!((t_two_sided_p(2.306, 8) - 0.05).abs() < 5e-4);
        assert!((t_two_sided_p(2.776, 4) - 0.05).abs() < 5e-4);
        assert!((t_two_sided_p(0.0, 7) - 1.0).abs() < 1e-12);
    }

    /// Published t-table brackets at df = 7 sandwich a random-sample p.
    #[test]
    fn paired_t_p_is_consistent_with_t_tables() {
        let d = [0.64, 1.13, -0.21, 0.88, 0.45, 1.62, 0.12, 0.73];
        let r = paired_t(&d).unwrap();
        // df=7: two-sided 0.05 at 2.365, 0.01 at 3.499
        assert!(r.statistic > 2.365 && r.statistic < 3.499);
        assert!(r.p_value < 0.05 && r.p_value > 0.01);
        let p = t_two_sided_p(r.statistic, 7);
        assert!((p - r.p_value).abs() < 1e-12);
    }

    #[test]
    fn mean_ci95_uses_published_t_quantile() {
        // df=4 quantile 2.776
        let q = t_quantile_975(4);
        assert!((q - 2.776).abs() < 1e-3, "q={q}");
        let samples = [2.0, 4.0, 6.0, 8.0, 10.0];
        let (mean, half) = mean_ci95(&samples).unwrap();
        assert_eq!(mean, 6.0);
        let sd = (samples.iter().map(|x| (x - 6.0) * (x - 6.0)).sum::<f64>() / 4.0).sqrt();
        assert!((half - q * sd / 5.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn mean_ci95_constant_sample() {
        let (mean, half) = mean_ci95(&[3.25, 3.25, 3.25]).unwrap();
        assert_eq!(mean, 3.25);
        assert_eq!(half, 0.0);
    }

    /// Permutation oracle: t-approximate p stays within 0.02 of the exact
    /// permutation p at n = 10.
    #[test]
    fn spearman_p_close_to_permutation_p() {
        let mut rng = stream(13, &[lane::INIT]);
        let x: Vec<f64> = (0..10).map(|_| std_normal(&mut rng)).collect();
        let y: Vec<f64> = (0..10).map(|_| std_normal(&mut rng)).collect();
        let approx = spearman(&x, &y).unwrap();
        let exact = spearman_permutation_p(&x, &y).unwrap();
        assert!(
            (approx.p_value - exact.p_value).abs() < 0.02,
            "t-approx {} vs permutation {}",
            approx.p_value,
            exact.p_value
        );
    }
}
