//! Small statistical toolkit: moments, KS and chi-square tests.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Sample mean and its standard error.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Empirical second-moment matrix about the sample mean and the standard
/// error of each entry.
pub fn empirical_covariance(samples: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = samples.first().map_or(0, |s| s.len());
    let n = samples.len() as f64;
    let mean: Vec<f64> = (0..d).map(|i| samples.iter().map(|s| s[i]).sum::<f64>() / n).collect();
    let mut cov = vec![vec![0.0; d]; d];
    let mut se = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            let prods: Vec<f64> = samples.iter().map(|s| (s[i] - mean[i]) * (s[j] - mean[j])).collect();
            let (m, e) = mean_and_se(&prods);
            cov[i][j] = m * n / (n - 1.0);
            se[i][j] = e;
        }
    }
    (cov, se)
}

/// Kolmogorov limit law `Q(λ) = 2 Σ_{k≥1} (-1)^{k-1} exp(-2k²λ²)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Asymptotic p-value for statistic `d` at effective sample size `n`.
pub fn ks_pvalue(d: f64, n: f64) -> f64 {
    let sn = n.sqrt();
    kolmogorov_q((sn + 0.12 + 0.11 / sn) * d)
}

/// One-sample KS statistic against a continuous CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0f64, |m, (k, &x)| {
        let f = cdf(x);
        m.max(f - k as f64 / n).max((k + 1) as f64 / n - f)
    })
}

/// One-sample KS test against the standard normal: `(statistic, p-value)`.
pub fn ks_normal(samples: &[f64]) -> (f64, f64) {
    let normal = Normal::standard();
    let d = ks_statistic(samples, |x| normal.cdf(x));
    (d, ks_pvalue(d, samples.len() as f64))
}

/// Two-sample KS test: `(statistic, p-value)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
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
    (d, ks_pvalue(d, n * m / (n + m)))
}

/// Pearson chi-square goodness of fit: `(statistic, p-value)`.
pub fn chi_square(observed: &[f64], expected: &[f64]) -> (f64, f64) {
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .filter(|(_, &e)| e > 0.0)
        .map(|(&o, &e)| (o - e) * (o - e) / e)
        .sum();
    let dof = expected.iter().filter(|&&e| e > 0.0).count().saturating_sub(1).max(1);
    let p = 1.0 - ChiSquared::new(dof as f64).expect("positive dof").cdf(stat);
    (stat, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kolmogorov_tail_values() {
        // Q(1.3581) ≈ 0.05, Q(1.6276) ≈ 0.01
        assert!((kolmogorov_q(1.3581) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_q(1.6276) - 0.01).abs() < 1e-3);
        assert_eq!(kolmogorov_q(0.0), 1.0);
    }

    #[test]
    fn constant_samples_reject() {
        let (d, p) = ks_normal(&vec![0.0; 200]);
        assert!(d >= 0.5);
        assert!(p < 1e-10);
    }

    #[test]
    fn moments() {
        let (m, se) = mean_and_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn chi_square_perfect_fit() {
        let (s, p) = chi_square(&[10.0, 20.0, 30.0], &[10.0, 20.0, 30.0]);
        assert_eq!(s, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
    }
}
