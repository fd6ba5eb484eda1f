//! Small statistics helpers used by validation and by the test suites.

/// Poisson probability mass function, computed multiplicatively.
pub fn poisson_pmf(lambda: f64, k: u64) -> f64 {
    let mut term = (-lambda).exp();
    for j in 1..=k {
        term *= lambda / j as f64;
    }
    term
}

/// One-sample Kolmogorov-Smirnov statistic against a CDF. Sorts in place.
pub fn ks_one_sample(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut d = 0.0_f64;
    for (idx, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        let lo = idx as f64 / n;
        let hi = (idx + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    d
}

/// Two-sample Kolmogorov-Smirnov statistic. Sorts both inputs in place.
pub fn ks_two_sample(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut i = 0;
    let mut j = 0;
    let mut d = 0.0_f64;
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_pmf_sums_to_one() {
        let total: f64 = (0..60).map(|k| poisson_pmf(4.2, k)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ks_statistic_vanishes_on_exact_quantiles() {
        // points at the midpoints of n equal probability slices
        let n = 1000;
        let mut xs: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) / n as f64).collect();
        let d = ks_one_sample(&mut xs, |x| x.clamp(0.0, 1.0));
        assert!(d <= 0.5 / n as f64 + 1e-12, "d = {d}");
    }

    #[test]
    fn ks_two_sample_detects_shift() {
        let mut a: Vec<f64> = (0..500).map(|k| k as f64 / 500.0).collect();
        let mut b: Vec<f64> = (0..500).map(|k| k as f64 / 500.0 + 0.3).collect();
        let d = ks_two_sample(&mut a, &mut b);
        assert!(d > 0.25, "d = {d}");
    }
}
