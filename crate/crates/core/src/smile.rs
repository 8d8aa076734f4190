//! Implied-volatility slices and their monotone cubic interpolation.

use alloc::vec::Vec;

use crate::blackscholes::{self, BsPoint};
use crate::error::{ensure, Error, Result};

/// Strikes in a simulated smile.
pub const DEFAULT_STRIKE_COUNT: usize = 41;
/// Half-width of the simulated strike range in units of `sigma0 sqrt(tau)`.
pub const DEFAULT_STRIKE_WIDTH: f64 = 4.0;

/// One maturity's implied volatilities on a set of log-strikes.
#[derive(Debug, Clone, PartialEq)]
pub struct SmileSlice {
    /// Valuation time.
    pub t: f64,
    /// Maturity.
    pub maturity: f64,
    /// Log-spot `x`, which is also the ATM log-strike.
    pub log_spot: f64,
    pub strikes: Vec<f64>,
    pub ivs: Vec<f64>,
    pub stderr: Option<Vec<f64>>,
    /// Paths behind the estimates, 0 for exact inputs.
    pub n_paths: u64,
}

impl SmileSlice {
    pub fn new(
        t: f64,
        maturity: f64,
        log_spot: f64,
        strikes: Vec<f64>,
        ivs: Vec<f64>,
        stderr: Option<Vec<f64>>,
    ) -> Result<Self> {
        let s = Self { t, maturity, log_spot, strikes, ivs, stderr, n_paths: 0 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.maturity > self.t, "maturity", self.maturity)?;
        ensure(self.log_spot.is_finite(), "log_spot", self.log_spot)?;
        let n = self.strikes.len();
        ensure(n >= 4, "strikes", n as f64)?;
        ensure(self.ivs.len() == n, "ivs", self.ivs.len() as f64)?;
        if let Some(se) = &self.stderr {
            ensure(se.len() == n, "stderr", se.len() as f64)?;
        }
        for w in self.strikes.windows(2) {
            ensure(w[0] < w[1], "strikes", w[1])?;
        }
        for &v in &self.ivs {
            ensure(v > 0.0 && v.is_finite(), "ivs", v)?;
        }
        let (lo, hi) = (self.strikes[0], self.strikes[n - 1]);
        ensure(self.log_spot >= lo && self.log_spot <= hi, "log_spot", self.log_spot)?;
        Ok(())
    }

    /// Time to maturity `T - t`.
    pub fn tau(&self) -> f64 {
        self.maturity - self.t
    }

    pub fn len(&self) -> usize {
        self.strikes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strikes.is_empty()
    }
}

/// `n` log-strikes evenly spaced on `x +/- width * sigma0 * sqrt(tau)`.
pub fn strike_grid(log_spot: f64, sigma0: f64, tau: f64, n: usize, width: f64) -> Vec<f64> {
    assert!(n >= 2, "strike grid needs at least two strikes");
    let half = width * sigma0 * libm::sqrt(tau);
    let step = 2.0 * half / (n - 1) as f64;
    (0..n)
        .map(|i| if 2 * i + 1 == n { log_spot } else { log_spot - half + step * i as f64 })
        .collect()
}

/// Inverts `(log_strike, price, price_stderr)` triples into a slice.
///
/// IV standard errors follow the delta method, `stderr_price / vega`.
/// The first price outside its no-arbitrage bounds aborts the build with
/// [`Error::PriceOutOfBounds`] carrying that strike.
pub fn build_slice(prices: &[(f64, f64, f64)], log_spot: f64, t: f64, maturity: f64) -> Result<SmileSlice> {
    ensure(maturity > t, "maturity", maturity)?;
    let tau = maturity - t;
    let mut strikes = Vec::with_capacity(prices.len());
    let mut ivs = Vec::with_capacity(prices.len());
    let mut stderr = Vec::with_capacity(prices.len());
    for &(k, price, se) in prices {
        let (iv, iv_se) = invert_with_stderr(log_spot, k, tau, price, se)?;
        strikes.push(k);
        ivs.push(iv);
        stderr.push(iv_se);
    }
    SmileSlice::new(t, maturity, log_spot, strikes, ivs, Some(stderr))
}

pub(crate) fn invert_with_stderr(x: f64, k: f64, tau: f64, price: f64, price_se: f64) -> Result<(f64, f64)> {
    let iv = blackscholes::implied_vol(x, k, tau, price)?;
    let vega = blackscholes::vega(&BsPoint { log_spot: x, log_strike: k, tau, vol: iv });
    Ok((iv, price_se / vega))
}

/// C¹ monotone piecewise-cubic Hermite interpolant of a slice.
///
/// Node slopes start from the three-point (non-uniform) estimate and are
/// limited with the Fritsch-Carlson conditions, so the curve never leaves
/// the range of two neighbouring nodes.
#[derive(Debug, Clone)]
pub struct SmileInterpolant {
    slice: SmileSlice,
    slopes: Vec<f64>,
}

impl SmileInterpolant {
    pub fn new(slice: SmileSlice) -> Result<Self> {
        slice.validate()?;
        let slopes = fritsch_carlson_slopes(&slice.strikes, &slice.ivs);
        Ok(Self { slice, slopes })
    }

    pub fn slice(&self) -> &SmileSlice {
        &self.slice
    }

    pub fn domain(&self) -> (f64, f64) {
        let k = &self.slice.strikes;
        (k[0], k[k.len() - 1])
    }

    pub fn log_spot(&self) -> f64 {
        self.slice.log_spot
    }

    pub fn tau(&self) -> f64 {
        self.slice.tau()
    }

    fn locate(&self, k: f64) -> Result<usize> {
        let (lower, upper) = self.domain();
        if !(k >= lower && k <= upper) {
            return Err(Error::OutOfDomain { log_strike: k, lower, upper });
        }
        let strikes = &self.slice.strikes;
        let i = strikes.partition_point(|&s| s <= k);
        Ok(i.clamp(1, strikes.len() - 1) - 1)
    }

    /// Interpolated implied volatility.
    pub fn iv_at(&self, k: f64) -> Result<f64> {
        let i = self.locate(k)?;
        Ok(self.hermite(i, k).0)
    }

    /// Derivative `dI/dk` of the interpolant.
    pub fn slope_at(&self, k: f64) -> Result<f64> {
        let i = self.locate(k)?;
        Ok(self.hermite(i, k).1)
    }

    /// IV standard error at `k`, linear between nodes; zero without stderr.
    pub fn stderr_at(&self, k: f64) -> Result<f64> {
        let i = self.locate(k)?;
        let Some(se) = &self.slice.stderr else { return Ok(0.0) };
        let (w0, w1) = self.linear_weights(i, k);
        Ok(w0 * se[i] + w1 * se[i + 1])
    }

    /// Index `i` and weights of the nodes `i`, `i+1` bracketing `k`.
    pub fn bracket(&self, k: f64) -> Result<(usize, f64, f64)> {
        let i = self.locate(k)?;
        let (w0, w1) = self.linear_weights(i, k);
        Ok((i, w0, w1))
    }

    fn linear_weights(&self, i: usize, k: f64) -> (f64, f64) {
        let s = &self.slice.strikes;
        let u = (k - s[i]) / (s[i + 1] - s[i]);
        (1.0 - u, u)
    }

    fn hermite(&self, i: usize, k: f64) -> (f64, f64) {
        let (s, y, m) = (&self.slice.strikes, &self.slice.ivs, &self.slopes);
        let h = s[i + 1] - s[i];
        let u = (k - s[i]) / h;
        let (u2, u3) = (u * u, u * u * u);
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = u3 - 2.0 * u2 + u;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = u3 - u2;
        let value = h00 * y[i] + h * h10 * m[i] + h01 * y[i + 1] + h * h11 * m[i + 1];
        let d00 = (6.0 * u2 - 6.0 * u) / h;
        let d10 = 3.0 * u2 - 4.0 * u + 1.0;
        let d01 = -d00;
        let d11 = 3.0 * u2 - 2.0 * u;
        let deriv = d00 * y[i] + d10 * m[i] + d01 * y[i + 1] + d11 * m[i + 1];
        (value, deriv)
    }

    /// `I(x)`.
    pub fn atm_iv(&self) -> Result<f64> {
        self.iv_at(self.slice.log_spot)
    }

    /// `dI/dk` at `k = x`.
    pub fn atm_skew(&self) -> Result<f64> {
        self.slope_at(self.slice.log_spot)
    }
}

fn fritsch_carlson_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    let mut m = alloc::vec![0.0; n];
    for i in 1..n - 1 {
        m[i] = if delta[i - 1] * delta[i] <= 0.0 {
            0.0
        } else {
            (h[i] * delta[i - 1] + h[i - 1] * delta[i]) / (h[i - 1] + h[i])
        };
    }
    m[0] = end_slope(h[0], h[1], delta[0], delta[1]);
    m[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    for i in 0..n - 1 {
        if delta[i] == 0.0 {
            m[i] = 0.0;
            m[i + 1] = 0.0;
            continue;
        }
        let a = m[i] / delta[i];
        let b = m[i + 1] / delta[i];
        let r = a * a + b * b;
        if r > 9.0 {
            let tau = 3.0 / libm::sqrt(r);
            m[i] = tau * a * delta[i];
            m[i + 1] = tau * b * delta[i];
        }
    }
    m
}

/// One-sided three-point end slope, clipped to keep the end monotone.
fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if m * d0 <= 0.0 {
        0.0
    } else if d0 * d1 <= 0.0 && m.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const X: f64 = 4.605_170_185_988_092; // ln 100

    fn slice_from(f: impl Fn(f64) -> f64, tau: f64) -> SmileSlice {
        let strikes = strike_grid(X, 0.2, tau, 41, 4.0);
        let ivs = strikes.iter().map(|&k| f(k)).collect();
        SmileSlice::new(0.0, tau, X, strikes, ivs, None).unwrap()
    }

    #[test]
    fn grid_is_centered_and_uniform() {
        let k = strike_grid(X, 0.2, 1.0, 41, 4.0);
        assert_eq!(k[20], X);
        assert!((k[0] - (X - 0.8)).abs() < 1e-14);
        assert!((k[40] - (X + 0.8)).abs() < 1e-14);
        assert!(k.windows(2).all(|w| ((w[1] - w[0]) - 0.04).abs() < 1e-13));
    }

    #[test]
    fn flat_prices_give_flat_slice() {
        let tau = 0.5;
        let prices: Vec<_> = strike_grid(X, 0.2, tau, 41, 4.0)
            .into_iter()
            .map(|k| (k, blackscholes::bs_price(&BsPoint { log_spot: X, log_strike: k, tau, vol: 0.2 }), 0.01))
            .collect();
        let s = build_slice(&prices, X, 0.0, tau).unwrap();
        assert!(s.ivs.iter().all(|&v| (v - 0.2).abs() < 1e-10));
        // delta-method stderr at the money: 0.01 / vega
        let vega = 100.0 * crate::normal::pdf(0.5 * 0.2 * tau.sqrt()) * tau.sqrt();
        assert!((s.stderr.as_ref().unwrap()[20] - 0.01 / vega).abs() < 1e-12);
        let f = SmileInterpolant::new(s).unwrap();
        for k in [X - 0.3, X, X + 0.123] {
            assert!((f.iv_at(k).unwrap() - 0.2).abs() < 1e-10);
        }
        assert!(f.atm_skew().unwrap().abs() < 1e-8);
    }

    #[test]
    fn bad_price_names_its_strike() {
        let k = [X - 0.2, X - 0.1, X, X + 0.1];
        let mut prices: Vec<_> = k
            .iter()
            .map(|&k| (k, blackscholes::bs_price(&BsPoint { log_spot: X, log_strike: k, tau: 1.0, vol: 0.2 }), 0.0))
            .collect();
        prices[1].1 = 5.0; // below intrinsic 100 - e^{x-0.1} = 9.5
        match build_slice(&prices, X, 0.0, 1.0) {
            Err(Error::PriceOutOfBounds { log_strike, .. }) => assert_eq!(log_strike, k[1]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn interpolant_is_exact_at_nodes() {
        let s = slice_from(|k| 0.2 + 0.3 * (k - X) * (k - X) - 0.1 * (k - X), 1.0);
        let f = SmileInterpolant::new(s.clone()).unwrap();
        for (k, v) in s.strikes.iter().zip(&s.ivs) {
            assert_eq!(f.iv_at(*k).unwrap(), *v);
        }
    }

    #[test]
    fn linear_smile_is_reproduced() {
        let s = slice_from(|k| 0.2 + 0.5 * (k - X), 0.04);
        let f = SmileInterpolant::new(s.clone()).unwrap();
        let mid = 0.5 * (s.strikes[7] + s.strikes[8]);
        assert!((f.iv_at(mid).unwrap() - 0.5 * (s.ivs[7] + s.ivs[8])).abs() < 1e-15);
        assert!((f.atm_skew().unwrap() - 0.5).abs() < 1e-12);
        assert!((f.atm_iv().unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn linear_smile_survives_price_round_trip() {
        let tau = 0.25;
        let prices: Vec<_> = strike_grid(X, 0.2, tau, 41, 4.0)
            .into_iter()
            .map(|k| {
                let vol = 0.2 - 0.4 * (k - X);
                (k, blackscholes::bs_price(&BsPoint { log_spot: X, log_strike: k, tau, vol }), 0.0)
            })
            .collect();
        let f = SmileInterpolant::new(build_slice(&prices, X, 0.0, tau).unwrap()).unwrap();
        assert!((f.atm_skew().unwrap() + 0.4).abs() < 1e-6);
    }

    #[test]
    fn outside_domain_is_an_error() {
        let f = SmileInterpolant::new(slice_from(|_| 0.2, 1.0)).unwrap();
        assert!(matches!(f.iv_at(X + 0.81), Err(Error::OutOfDomain { .. })));
        assert!(f.iv_at(X + 0.8).is_ok());
    }

    #[test]
    fn put_call_parity_gives_same_smile() {
        // calls recovered from OTM puts: C = P + e^x - e^k
        let tau = 0.3;
        for k in [X - 0.3, X - 0.05, X + 0.2] {
            let vol = 0.25 + 0.1 * (k - X);
            let p = BsPoint { log_spot: X, log_strike: k, tau, vol };
            let call = blackscholes::bs_price(&p);
            let put = call - libm::exp(X) + libm::exp(k);
            let from_put = put + libm::exp(X) - libm::exp(k);
            let iv = blackscholes::implied_vol(X, k, tau, from_put).unwrap();
            assert!((iv - vol).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn no_overshoot_between_nodes(ys in proptest::collection::vec(0.05f64..0.6, 6..20), u in 0.0f64..1.0) {
            let n = ys.len();
            let strikes: Vec<f64> = (0..n).map(|i| X - 0.5 + i as f64 / (n - 1) as f64).collect();
            let s = SmileSlice::new(0.0, 1.0, X, strikes.clone(), ys.clone(), None).unwrap();
            let f = SmileInterpolant::new(s).unwrap();
            for i in 0..n - 1 {
                let k = strikes[i] + u * (strikes[i + 1] - strikes[i]);
                let v = f.iv_at(k).unwrap();
                let (lo, hi) = (ys[i].min(ys[i + 1]), ys[i].max(ys[i + 1]));
                prop_assert!(v >= lo - 1e-14 && v <= hi + 1e-14, "interval {i}: {v} not in [{lo}, {hi}]");
            }
        }

        #[test]
        fn continuous_derivative_at_nodes(ys in proptest::collection::vec(0.05f64..0.6, 6..12)) {
            let n = ys.len();
            let strikes: Vec<f64> = (0..n).map(|i| X - 0.5 + 0.1 * i as f64).collect();
            let f = SmileInterpolant::new(SmileSlice::new(0.0, 1.0, X, strikes.clone(), ys, None).unwrap()).unwrap();
            for &k in &strikes[1..n - 1] {
                let left = f.slope_at(k - 1e-9).unwrap();
                let right = f.slope_at(k + 1e-9).unwrap();
                prop_assert!((left - right).abs() < 1e-5 * (1.0 + left.abs()));
            }
        }
    }
}
