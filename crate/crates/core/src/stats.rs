//! Reference distributions and small statistical tests used to validate
//! simulations against exact laws.

/// Skellam probability mass function: `P(N1 - N2 = k)` for independent
/// Poisson counts with means `mu1`, `mu2`. This is the displacement law
/// of a single free particle with right rate `mu1/t` and left rate
/// `mu2/t` over time `t`.
pub fn skellam_pmf(k: i64, mu1: f64, mu2: f64) -> f64 {
    assert!(mu1 >= 0.0 && mu2 >= 0.0);
    if mu1 == 0.0 && mu2 == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if mu2 == 0.0 {
        return if k >= 0 { poisson_pmf(k as u64, mu1) } else { 0.0 };
    }
    if mu1 == 0.0 {
        return if k <= 0 { poisson_pmf((-k) as u64, mu2) } else { 0.0 };
    }
    // sum over n >= max(0, k) of mu1^n mu2^(n-k) / (n! (n-k)!), log-scaled
    let mut total = 0.0;
    let mut n = k.max(0);
    loop {
        let log_term = (n as f64) * mu1.ln() + ((n - k) as f64) * mu2.ln()
            - ln_factorial(n as u64)
            - ln_factorial((n - k) as u64);
        let term = (log_term - mu1 - mu2).exp();
        total += term;
        n += 1;
        if term < 1e-300 || (total > 0.0 && term < 1e-18 * total && n > k.max(0) + 5) {
            break;
        }
        if n > k.max(0) + 10_000 {
            break;
        }
    }
    total
}

/// Upper tail `P(X >= k)` of the Skellam distribution.
pub fn skellam_sf(k: i64, mu1: f64, mu2: f64) -> f64 {
    // sum the lighter tail and complement if needed
    let mean = mu1 - mu2;
    if (k as f64) >= mean {
        let mut s = 0.0;
        let mut j = k;
        loop {
            let p = skellam_pmf(j, mu1, mu2);
            s += p;
            if p < 1e-18 * s.max(1e-300) && (j as f64) > mean + 5.0 {
                break;
            }
            j += 1;
            if j > k + 10_000 {
                break;
            }
        }
        s
    } else {
        let mut s = 0.0;
        let mut j = k - 1;
        loop {
            let p = skellam_pmf(j, mu1, mu2);
            s += p;
            if p < 1e-18 * s.max(1e-300) && (j as f64) < mean - 5.0 {
                break;
            }
            j -= 1;
            if j < k - 10_000 {
                break;
            }
        }
        1.0 - s
    }
}

pub fn poisson_pmf(k: u64, mu: f64) -> f64 {
    ((k as f64) * mu.ln() - mu - ln_factorial(k)).exp()
}

pub fn ln_factorial(n: u64) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

/// Log-gamma by the Lanczos approximation (g = 7, 9 coefficients);
/// absolute error below 1e-13 on the positive axis.
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    assert!(x > 0.0, "ln_gamma requires positive argument");
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma P(a, x), by series for x < a+1 and
/// continued fraction otherwise.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    assert!(a > 0.0 && x >= 0.0);
    if x == 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        // series expansion
        let mut sum = 1.0 / a;
        let mut term = sum;
        let mut ap = a;
        for _ in 0..500 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        sum * (-x + a * x.ln() - ln_gamma(a)).exp()
    } else {
        1.0 - gamma_q_cf(a, x)
    }
}

fn gamma_q_cf(a: f64, x: f64) -> f64 {
    // Lentz continued fraction for Q(a, x)
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// CDF of the chi-squared distribution with `k` degrees of freedom.
pub fn chi2_cdf(x: f64, k: usize) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    gamma_p(k as f64 / 2.0, x / 2.0)
}

/// Pearson chi-squared goodness-of-fit p-value for observed counts against
/// expected probabilities. Cells with expected count below `min_expected`
/// are pooled into a single remainder cell.
pub fn chi2_test(observed: &[u64], expected_probs: &[f64], total: u64, min_expected: f64) -> f64 {
    assert_eq!(observed.len(), expected_probs.len());
    let n = total as f64;
    let mut stat = 0.0;
    let mut pooled_obs = 0.0;
    let mut pooled_exp = 0.0;
    let mut cells = 0usize;
    for (&o, &p) in observed.iter().zip(expected_probs) {
        let e = n * p;
        if e < min_expected {
            pooled_obs += o as f64;
            pooled_exp += e;
        } else {
            stat += (o as f64 - e).powi(2) / e;
            cells += 1;
        }
    }
    // the remainder cell also absorbs all probability mass outside the listed cells
    let listed: f64 = expected_probs.iter().sum();
    pooled_exp += n * (1.0 - listed).max(0.0);
    pooled_obs += (total - observed.iter().sum::<u64>()) as f64;
    if pooled_exp > 0.0 {
        stat += (pooled_obs - pooled_exp).powi(2) / pooled_exp;
        cells += 1;
    }
    let dof = cells.saturating_sub(1).max(1);
    1.0 - chi2_cdf(stat, dof)
}

/// Two-sided Kolmogorov–Smirnov p-value (asymptotic Kolmogorov law) for a
/// given statistic `d` at sample size `n`. Conservative for discrete laws.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let lambda = (n as f64).sqrt() * d;
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        s += 2.0 * (-1.0f64).powi(k + 1) * (-2.0 * kf * kf * lambda * lambda).exp();
    }
    s.clamp(0.0, 1.0)
}

/// KS statistic between an empirical sample of integers and an exact pmf
/// given on `support` (sorted ascending).
pub fn ks_statistic(sample_counts: &[(i64, u64)], support: &[(i64, f64)], n: u64) -> f64 {
    let mut emp = std::collections::BTreeMap::new();
    for &(x, c) in sample_counts {
        *emp.entry(x).or_insert(0u64) += c;
    }
    let mut d: f64 = 0.0;
    let mut cdf_exact = 0.0;
    let mut cdf_emp = 0.0;
    let mut iter = emp.iter().peekable();
    for &(x, p) in support {
        cdf_exact += p;
        while let Some(&(&xe, &c)) = iter.peek() {
            if xe <= x {
                cdf_emp += c as f64 / n as f64;
                iter.next();
            } else {
                break;
            }
        }
        d = d.max((cdf_emp - cdf_exact).abs());
    }
    d
}

/// Mean and (population) standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Least-squares slope of y against x.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// 99% binomial confidence half-width (normal approximation).
pub fn binomial_ci99(p_hat: f64, n: u64) -> f64 {
    2.5758293035489004 * (p_hat * (1.0 - p_hat) / n as f64).sqrt()
}

/// One binomial standard error.
pub fn binomial_sigma(p_hat: f64, n: u64) -> f64 {
    (p_hat * (1.0 - p_hat) / n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-13);
        assert!((ln_gamma(2.0)).abs() < 1e-13);
        assert!((ln_gamma(5.0) - 24.0f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
    }

    #[test]
    fn skellam_normalizes_and_matches_moments() {
        let (mu1, mu2) = (1.3, 0.7);
        let mut total = 0.0;
        let mut mean = 0.0;
        let mut second = 0.0;
        for k in -60..=60 {
            let p = skellam_pmf(k, mu1, mu2);
            total += p;
            mean += k as f64 * p;
            second += (k as f64).powi(2) * p;
        }
        assert!((total - 1.0).abs() < 1e-12);
        assert!((mean - (mu1 - mu2)).abs() < 1e-12);
        let var = second - mean * mean;
        assert!((var - (mu1 + mu2)).abs() < 1e-11);
    }

    #[test]
    fn skellam_degenerate_is_poisson() {
        for k in 0..10 {
            assert!((skellam_pmf(k, 2.0, 0.0) - poisson_pmf(k as u64, 2.0)).abs() < 1e-14);
        }
        assert_eq!(skellam_pmf(-1, 2.0, 0.0), 0.0);
    }

    #[test]
    fn skellam_sf_complements_pmf() {
        let (mu1, mu2) = (2.0, 1.0);
        let direct: f64 = (3..200).map(|k| skellam_pmf(k, mu1, mu2)).sum();
        assert!((skellam_sf(3, mu1, mu2) - direct).abs() < 1e-12);
        let below_mean = skellam_sf(-4, mu1, mu2);
        let direct2: f64 = (-4..200).map(|k| skellam_pmf(k, mu1, mu2)).sum();
        assert!((below_mean - direct2).abs() < 1e-12);
    }

    #[test]
    fn chi2_cdf_median_and_tail() {
        // chi2 with 2 dof is Exp(1/2): CDF(x) = 1 - exp(-x/2)
        for x in [0.5, 1.0, 3.0, 10.0] {
            assert!((chi2_cdf(x, 2) - (1.0 - (-x / 2.0f64).exp())).abs() < 1e-12);
        }
    }

    #[test]
    fn chi2_test_accepts_true_distribution() {
        // deterministic pseudo-sample: counts exactly proportional to probs
        let probs = [0.25, 0.25, 0.25, 0.25];
        let obs = [2500u64, 2500, 2500, 2500];
        let p = chi2_test(&obs, &probs, 10_000, 5.0);
        assert!(p > 0.99);
    }

    #[test]
    fn ks_pvalue_monotone() {
        assert!(ks_pvalue(0.001, 1000) > 0.999);
        assert!(ks_pvalue(0.2, 1000) < 1e-6);
    }

    #[test]
    fn slope_of_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [2.0, 4.0, 6.0, 8.0];
        assert!((fit_slope(&x, &y) - 2.0).abs() < 1e-14);
    }
}
