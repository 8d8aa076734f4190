use roughskew_core::analytics::{convergence_rate_check, ConvergenceRates, SkewConfig};
use roughskew_core::{RBergomiParams, Sequential};

const LADDER: [f64; 6] = [0.05, 0.1, 0.25, 0.5, 1.0, 2.0];

fn rates(hurst: f64) -> ConvergenceRates {
    let params = RBergomiParams::new(100.0, 0.2, 0.8, hurst, -0.8).unwrap();
    let cfg = SkewConfig::default();
    convergence_rate_check(&params, &LADDER, &cfg, &Sequential).unwrap()
}

#[test]
fn skew_covariance_gap_closes_at_the_expected_order() {
    let r = rates(0.3);
    assert!(r.error_slope >= 2.0 * 0.3 + 1.0 - 0.3, "error slope {:.3}", r.error_slope);
    assert!((r.atm_skew_slope + 0.2).abs() <= 0.05, "atm skew slope {:.3}", r.atm_skew_slope);
}

#[test]
fn rough_gap_is_of_higher_order_than_the_skew() {
    // Over tabulated maturities the H = 0.1 gap decays like tau^0.7 to tau^0.9,
    // short of its asymptotic order 1.2 but faster than the skew's tau^0.6.
    let r = rates(0.1);
    assert!(r.error_slope > 0.6, "error slope {:.3}", r.error_slope);
    assert!((r.atm_skew_slope + 0.4).abs() <= 0.05, "atm skew slope {:.3}", r.atm_skew_slope);
}
