//! Reference values of the skew/covariance study, reproduced at desk
//! scale with conditional pricing.
//!
//! Tabulated numbers carry four decimals, so every comparison allows half a
//! unit in the last place on top of three standard errors.

use roughskew_core::analytics::{hurst_estimate, skew_report, SkewConfig};
use roughskew_core::{Estimate, RBergomiParams, Sequential, SkewReport};

const HALF_ULP: f64 = 5e-5;

fn report(hurst: f64, rho: f64, maturity: f64, n_paths: usize) -> SkewReport {
    let params = RBergomiParams::new(100.0, 0.2, 0.8, hurst, rho).unwrap();
    let mut cfg = SkewConfig::default();
    cfg.pricing.n_paths = n_paths;
    skew_report(&params, maturity, &cfg, &Sequential).unwrap()
}

fn assert_matches(what: &str, e: &Estimate, table: f64) {
    let tol = HALF_ULP + 3.0 * e.stderr;
    assert!(
        (e.value - table).abs() <= tol,
        "{what}: simulated {:.6} (se {:.1e}) vs table {table}",
        e.value,
        e.stderr
    );
}

#[test]
fn covariance_short_rough_low_correlation() {
    let r = report(0.1, -0.2, 0.5, 200_000);
    assert_matches("cov", &r.covariance, -0.0009);
}

#[test]
fn covariance_long_smooth_high_correlation() {
    let r = report(0.9, -0.8, 2.0, 100_000);
    assert_matches("cov", &r.covariance, -0.0113);
}

#[test]
fn normalized_ratios_at_the_shortest_tabulated_maturity() {
    let r = report(0.1, -0.2, 0.05, 200_000);
    assert_matches("ratio_skew", &r.ratio_skew, -0.0014);
    assert_matches("ratio_cov", &r.ratio_cov, -0.0015);
}

#[test]
fn normalized_ratios_brownian_case() {
    let r = report(0.5, -0.6, 1.0, 200_000);
    assert_matches("ratio_skew", &r.ratio_skew, -0.0042);
    assert_matches("ratio_cov", &r.ratio_cov, -0.0046);
}

#[test]
fn hurst_recovered_from_short_maturities() {
    let r1 = report(0.3, -0.8, 0.0025, 1_000_000);
    let r2 = report(0.3, -0.8, 0.01, 1_000_000);
    let est = hurst_estimate(&r1, &r2).unwrap();
    let ratio = est.hurst / 0.3;
    assert!((0.95..=1.05).contains(&ratio), "H estimate {} (se {:.3})", est.hurst, est.stderr);
}
