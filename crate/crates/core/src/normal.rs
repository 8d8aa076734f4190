//! Standard normal density and distribution function.

use core::f64::consts::FRAC_1_SQRT_2;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * libm::exp(-0.5 * x * x)
}

/// Standard normal CDF via `erfc`, accurate in the tails where `1 - N(-x)`
/// would cancel.
#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// `sqrt(2*pi)`, used by the ATM implied-vol guess.
pub const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric() {
        for &x in &[0.0, 0.3, 1.0, 2.5, 7.0] {
            assert!((cdf(x) + cdf(-x) - 1.0).abs() < 1e-15);
            assert_eq!(pdf(x), pdf(-x));
        }
    }

    #[test]
    fn deep_tail_keeps_relative_precision() {
        // Mills ratio asymptotics: N(-x) ~ pdf(x)/x * (1 - 1/x^2 + 3/x^4)
        let x: f64 = 10.0;
        let approx = pdf(x) / x * (1.0 - 1.0 / (x * x) + 3.0 / x.powi(4) - 15.0 / x.powi(6));
        let rel = (cdf(-x) - approx).abs() / approx;
        assert!(rel < 1e-4, "rel {rel}");
    }
}
