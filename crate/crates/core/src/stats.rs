//! Small statistical helpers used by the simulators and their tests.

use std::f64::consts::PI;

use crate::special::erfc;

/// Two-sided standard-normal quantile for 99% coverage.
pub const Z_99: f64 = 2.575_829_303_548_900_4;

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// One-sample Kolmogorov–Smirnov statistic `sup |F_n - F|`. Sorts `samples`.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Survival function of the Kolmogorov distribution, `P(K > x)`.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.18 {
        // Jacobi-transformed series, fast for small x.
        let mut s = 0.0;
        for k in 1..=8 {
            let m = f64::from(2 * k - 1);
            s += (-m * m * PI * PI / (8.0 * x * x)).exp();
        }
        return (1.0 - (2.0 * PI).sqrt() / x * s).clamp(0.0, 1.0);
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = f64::from(k);
        let term = (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Asymptotic p-value of a one-sample KS statistic `d` over `n` points,
/// with the usual small-sample correction of the scaling.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    kolmogorov_survival((sn + 0.12 + 0.11 / sn) * d)
}

/// Upper-tail probability of a chi-square variable with one degree of freedom.
pub fn chi2_1dof_survival(x: f64) -> f64 {
    erfc((x / 2.0).max(0.0).sqrt())
}

/// Total-variation distance between two empirical count distributions given
/// as histograms (index = count value). Histograms are normalised here.
pub fn tv_distance(a: &[u64], b: &[u64]) -> f64 {
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    let len = a.len().max(b.len());
    let pa = |i: usize| a.get(i).copied().unwrap_or(0) as f64 / na as f64;
    let pb = |i: usize| b.get(i).copied().unwrap_or(0) as f64 / nb as f64;
    0.5 * (0..len).map(|i| (pa(i) - pb(i)).abs()).sum::<f64>()
}

/// Histogram of non-negative integer outcomes.
pub fn histogram(values: impl IntoIterator<Item = u64>) -> Vec<u64> {
    let mut h: Vec<u64> = Vec::new();
    for v in values {
        let v = v as usize;
        if v >= h.len() {
            h.resize(v + 1, 0);
        }
        h[v] += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_stderr_of_a_small_sample() {
        let (m, se) = mean_and_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // sample variance 5/3, n = 4
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn wilson_reference_values() {
        // 10 of 100 at 95% (z = 1.959964): the textbook interval is (0.0552, 0.1744).
        let (lo, hi) = wilson_interval(10, 100, 1.959_963_984_540_054);
        assert!((lo - 0.055_229_2).abs() < 1e-6, "{lo}");
        assert!((hi - 0.174_365_7).abs() < 1e-6, "{hi}");
        let (lo, hi) = wilson_interval(0, 50, Z_99);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.15);
    }

    #[test]
    fn kolmogorov_series_agree_at_the_switch_and_match_references() {
        // P(K > 1) = 0.26999967..., P(K > 1.36) = 0.04948587...
        assert!((kolmogorov_survival(1.0) - 0.269_999_671_677_7).abs() < 1e-10);
        assert!((kolmogorov_survival(1.36) - 0.049_485_876_755_38).abs() < 1e-10);
        let below = kolmogorov_survival(1.18 - 1e-12);
        let above = kolmogorov_survival(1.18);
        assert!((below - above).abs() < 1e-10);
        assert_eq!(kolmogorov_survival(0.0), 1.0);
    }

    #[test]
    fn ks_statistic_of_an_exact_grid() {
        let mut xs: Vec<f64> = (0..100).map(|i| (f64::from(i) + 0.5) / 100.0).collect();
        let d = ks_statistic(&mut xs, |x| x);
        assert!((d - 0.005).abs() < 1e-12);
    }

    #[test]
    fn chi_square_one_dof_reference() {
        assert!((chi2_1dof_survival(3.841_458_820_694_124) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn tv_distance_examples() {
        assert_eq!(tv_distance(&[1, 1], &[1, 1]), 0.0);
        assert_eq!(tv_distance(&[1, 0], &[0, 0, 3]), 1.0);
        assert!((tv_distance(&[3, 1], &[1, 3]) - 0.5).abs() < 1e-15);
        assert_eq!(histogram([0, 2, 2, 5]), vec![1, 0, 2, 0, 0, 1]);
    }
}
