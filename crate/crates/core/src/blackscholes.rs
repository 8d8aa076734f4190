//! Zero-rate Black-Scholes call pricing in log coordinates, the Greeks the
//! skew estimators rely on, and a safeguarded implied-volatility solver.
//!
//! Everything is expressed in log-spot `x` and log-strike `k`, so the call
//! price is `e^x N(d1) - e^k N(d2)`.

use crate::error::{ensure, Error, Result};
use crate::normal::{self, SQRT_2PI};

/// Below this total volatility `sigma * sqrt(tau)` prices collapse to intrinsic.
pub const DEGENERATE_TOTAL_VOL: f64 = 1e-12;
/// Relative price tolerance of [`implied_vol`], scaled by `e^x`.
pub const PRICE_TOL: f64 = 1e-12;
/// Step tolerance of [`implied_vol`] in volatility units.
pub const VOL_TOL: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 100;

/// A Black-Scholes evaluation point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsPoint {
    pub log_spot: f64,
    pub log_strike: f64,
    /// Time to maturity `T - t` in years.
    pub tau: f64,
    /// Annualized volatility.
    pub vol: f64,
}

impl BsPoint {
    /// Validating constructor.
    pub fn new(log_spot: f64, log_strike: f64, tau: f64, vol: f64) -> Result<Self> {
        ensure(log_spot.is_finite(), "log_spot", log_spot)?;
        ensure(log_strike.is_finite(), "log_strike", log_strike)?;
        ensure(tau > 0.0 && tau.is_finite(), "tau", tau)?;
        ensure(vol > 0.0 && vol.is_finite(), "vol", vol)?;
        Ok(Self { log_spot, log_strike, tau, vol })
    }

    #[inline]
    pub fn total_vol(&self) -> f64 {
        self.vol * libm::sqrt(self.tau)
    }

    #[inline]
    pub fn with_vol(self, vol: f64) -> Self {
        Self { vol, ..self }
    }

    #[inline]
    fn log_moneyness(&self) -> f64 {
        self.log_spot - self.log_strike
    }
}

#[inline]
pub fn d1(p: &BsPoint) -> f64 {
    let s = p.total_vol();
    p.log_moneyness() / s + 0.5 * s
}

#[inline]
pub fn d2(p: &BsPoint) -> f64 {
    let s = p.total_vol();
    p.log_moneyness() / s - 0.5 * s
}

/// Call price `e^x N(d1) - e^k N(d2)`.
///
/// In-the-money calls are assembled from the out-of-the-money put through
/// parity so the time value keeps full relative precision.
pub fn bs_price(p: &BsPoint) -> f64 {
    let intrinsic = intrinsic(p.log_spot, p.log_strike);
    if p.total_vol() < DEGENERATE_TOTAL_VOL {
        return intrinsic;
    }
    intrinsic + time_value(p)
}

/// Out-of-the-money side of the price: the call for `k >= x`, otherwise the
/// put. Equals `bs_price - intrinsic`.
pub fn time_value(p: &BsPoint) -> f64 {
    if p.total_vol() < DEGENERATE_TOTAL_VOL {
        return 0.0;
    }
    let (a, b) = (d1(p), d2(p));
    let (fx, fk) = (libm::exp(p.log_spot), libm::exp(p.log_strike));
    let v = if p.log_strike >= p.log_spot {
        fx * normal::cdf(a) - fk * normal::cdf(b)
    } else {
        fk * normal::cdf(-b) - fx * normal::cdf(-a)
    };
    v.max(0.0)
}

#[inline]
pub fn intrinsic(log_spot: f64, log_strike: f64) -> f64 {
    (libm::exp(log_spot) - libm::exp(log_strike)).max(0.0)
}

/// `dC/dsigma = e^x N'(d1) sqrt(tau)`.
pub fn vega(p: &BsPoint) -> f64 {
    libm::exp(p.log_spot) * normal::pdf(d1(p)) * libm::sqrt(p.tau)
}

/// Sensitivity of the call delta `N(d1)` to volatility: `-N'(d1) d2 / sigma`.
pub fn vanna(p: &BsPoint) -> f64 {
    -normal::pdf(d1(p)) * d2(p) / p.vol
}

/// `d^2C/dsigma^2 = vega d1 d2 / sigma`.
pub fn volga(p: &BsPoint) -> f64 {
    vega(p) * d1(p) * d2(p) / p.vol
}

/// Derivative of the inverse Black-Scholes map with respect to price,
/// evaluated where `p.vol` is the implied volatility.
pub fn inv_bs_first_derivative(p: &BsPoint) -> f64 {
    1.0 / vega(p)
}

/// Second derivative of the inverse map with respect to price:
/// `[sigma^4 tau^2 - 4 (x-k)^2] / [4 (e^x N'(d1) tau)^2 sigma^3]`.
///
/// Vanishes at the zero-vanna and dual zero-vanna points.
pub fn inv_bs_second_derivative(p: &BsPoint) -> f64 {
    let m = p.log_moneyness();
    let s = p.vol;
    let num = s * s * s * s * p.tau * p.tau - 4.0 * m * m;
    let g = libm::exp(p.log_spot) * normal::pdf(d1(p)) * p.tau;
    num / (4.0 * g * g * s * s * s)
}

/// Volatility that reproduces `price` for a call with the given log-spot,
/// log-strike and maturity.
///
/// Newton on the out-of-the-money time value with vega as derivative,
/// safeguarded by a bisection bracket that is widened until it straddles
/// the root.
pub fn implied_vol(log_spot: f64, log_strike: f64, tau: f64, price: f64) -> Result<f64> {
    ensure(tau > 0.0 && tau.is_finite(), "tau", tau)?;
    ensure(log_spot.is_finite(), "log_spot", log_spot)?;
    ensure(log_strike.is_finite(), "log_strike", log_strike)?;
    let spot = libm::exp(log_spot);
    let lower = intrinsic(log_spot, log_strike);
    if !(price > lower && price < spot) {
        return Err(Error::PriceOutOfBounds { log_strike, price, lower, upper: spot });
    }
    let target = price - lower;
    let price_tol = PRICE_TOL * spot;
    let sqrt_tau = libm::sqrt(tau);
    let point = |vol: f64| BsPoint { log_spot, log_strike, tau, vol };
    let residual = |vol: f64| time_value(&point(vol)) - target;

    let mut lo = 0.0_f64;
    let mut hi = 1.0 / sqrt_tau;
    let mut widenings = 0;
    while residual(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        widenings += 1;
        if widenings > 200 {
            return Err(Error::NoConvergence {
                what: "implied vol bracket",
                best: hi,
                residual: residual(hi),
                iterations: widenings,
            });
        }
    }

    // ATM-style guess P sqrt(2 pi) / (e^x sqrt(tau)), kept inside the bracket.
    let guess = target * SQRT_2PI / (spot * sqrt_tau);
    let mut vol = if guess > lo && guess < hi { guess } else { 0.5 * (lo + hi) };
    let mut f = residual(vol);

    for iteration in 0..MAX_ITERATIONS {
        if f == 0.0 {
            return Ok(vol);
        }
        if f > 0.0 {
            hi = vol;
        } else {
            lo = vol;
        }
        let v = vega(&point(vol));
        let newton = vol - f / v;
        let next = if v > 0.0 && newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let step = (next - vol).abs();
        vol = next;
        f = residual(vol);
        if step <= VOL_TOL && f.abs() <= price_tol {
            // one more Newton step leaves the iterate at rounding level
            let v = vega(&point(vol));
            if v > 0.0 {
                let polished = vol - f / v;
                if polished > 0.0 && polished.is_finite() {
                    return Ok(polished);
                }
            }
            return Ok(vol);
        }
        if hi - lo <= f64::EPSILON * hi {
            if f.abs() <= price_tol {
                return Ok(vol);
            }
            return Err(Error::NoConvergence {
                what: "implied vol",
                best: vol,
                residual: f,
                iterations: iteration + 1,
            });
        }
    }
    if f.abs() <= price_tol {
        return Ok(vol);
    }
    Err(Error::NoConvergence { what: "implied vol", best: vol, residual: f, iterations: MAX_ITERATIONS })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn atm(vol: f64, tau: f64) -> BsPoint {
        let x = libm::log(100.0);
        BsPoint::new(x, x, tau, vol).unwrap()
    }

    #[test]
    fn d_values_at_the_money() {
        let p = atm(0.2, 1.0);
        assert_relative_eq!(d1(&p), 0.1, epsilon = 1e-15);
        assert_relative_eq!(d2(&p), -0.1, epsilon = 1e-15);
    }

    #[test]
    fn zero_vanna_identities() {
        let x = libm::log(100.0);
        let (vol, tau) = (0.2, 1.0);
        // x - k carries one rounding of the log-strike, ~1e-15 / sigma
        let p = BsPoint::new(x, x - vol * vol * tau / 2.0, tau, vol).unwrap();
        assert!(d2(&p).abs() < 1e-13);
        assert!(vanna(&p).abs() < 1e-13);
        assert!(volga(&p).abs() < 1e-12);
        assert!(inv_bs_second_derivative(&p).abs() < 1e-12);

        let q = BsPoint::new(x, x + vol * vol * tau / 2.0, tau, vol).unwrap();
        assert!(d1(&q).abs() < 1e-13);
        assert!(volga(&q).abs() < 1e-12);
        assert!(vanna(&q).abs() > 1e-3);
    }

    #[test]
    fn vanishing_vol_is_intrinsic() {
        assert_eq!(bs_price(&atm(1e-14, 1.0)), 0.0);
        assert!(bs_price(&atm(1e-6, 1.0)) < 1e-3);
    }

    #[test]
    fn deep_itm_tends_to_forward_minus_strike() {
        let x = libm::log(100.0);
        let k = libm::log(50.0);
        let p = BsPoint::new(x, k, 0.01, 0.2).unwrap();
        assert_relative_eq!(bs_price(&p), 50.0, epsilon = 1e-12);
    }

    #[test]
    fn out_of_bounds_prices_rejected() {
        let x = libm::log(100.0);
        let k = libm::log(90.0);
        assert!(matches!(implied_vol(x, k, 1.0, 9.999), Err(Error::PriceOutOfBounds { .. })));
        assert!(matches!(implied_vol(x, k, 1.0, 5.0), Err(Error::PriceOutOfBounds { .. })));
        assert!(matches!(implied_vol(x, k, 1.0, 100.5), Err(Error::PriceOutOfBounds { .. })));
    }

    #[test]
    fn round_trip_atm() {
        let p = atm(0.2, 1.0);
        let vol = implied_vol(p.log_spot, p.log_strike, 1.0, bs_price(&p)).unwrap();
        assert!((vol - 0.2).abs() < 1e-10);
    }

    #[test]
    fn inverse_derivative_times_vega_is_one() {
        let p = BsPoint::new(4.6, 4.5, 0.5, 0.3).unwrap();
        assert_relative_eq!(inv_bs_first_derivative(&p) * vega(&p), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn inverse_second_derivative_matches_greeks() {
        // (BS^-1)'' = -volga / vega^3
        let p = BsPoint::new(4.6, 4.45, 0.7, 0.25).unwrap();
        let expected = -volga(&p) / vega(&p).powi(3);
        assert_relative_eq!(inv_bs_second_derivative(&p), expected, max_relative = 1e-12);
    }
}
