//! Two-sample Kolmogorov–Smirnov test.

/// Result of comparing two samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsTest {
    /// Largest gap between the two empirical distribution functions.
    pub statistic: f64,
    /// Asymptotic p-value.
    pub p_value: f64,
}

impl KsTest {
    pub fn passes(&self, level: f64) -> bool {
        self.p_value >= level
    }
}

/// KS statistic and asymptotic p-value of two samples. NaNs are not allowed.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsTest {
    assert!(!a.is_empty() && !b.is_empty(), "KS test needs two non-empty samples");
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = (n * m / (n + m)).sqrt();
    KsTest { statistic: d, p_value: kolmogorov_q((ne + 0.12 + 0.11 / ne) * d) }
}

/// `P(K > lambda)` for the Kolmogorov distribution.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 2.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = sign * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 * sum.abs() {
            break;
        }
        sign = -sign;
    }
    sum.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kolmogorov_tail_known_points() {
        // tabulated critical values of the Kolmogorov distribution
        assert!((kolmogorov_q(1.358_098_8) - 0.05).abs() < 1e-6);
        assert!((kolmogorov_q(1.627_624_4) - 0.01).abs() < 1e-6);
        assert_eq!(kolmogorov_q(0.0), 1.0);
    }

    #[test]
    fn identical_samples_have_zero_statistic() {
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let t = ks_two_sample(&a, &a);
        assert_eq!(t.statistic, 0.0);
        assert!(t.passes(0.01));
    }

    #[test]
    fn shifted_samples_are_detected() {
        let a: Vec<f64> = (0..2000).map(|i| (i as f64 + 0.5) / 2000.0).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 0.1).collect();
        let t = ks_two_sample(&a, &b);
        assert!((t.statistic - 0.1).abs() < 1e-3);
        assert!(!t.passes(0.01));
    }

    #[test]
    fn ties_across_samples() {
        let t = ks_two_sample(&[1.0, 2.0, 2.0, 3.0], &[2.0, 2.0, 2.0, 2.0]);
        assert!((t.statistic - 0.25).abs() < 1e-15);
    }
}
