//! Zero-vanna (`d2 = 0`) and dual zero-vanna (`d1 = 0`) strikes of a smile.
//!
//! The strikes are the fixed points of `k = x -/+ I(k)^2 tau / 2`. Plain
//! iteration from `k = x` contracts quickly on realistic smiles; the step is
//! halved whenever the residual grows, and bisection on `d2` (resp. `d1`)
//! over the smile domain takes over if iteration fails.

use crate::error::{Error, Result};
use crate::estimate::Estimate;
use crate::smile::SmileInterpolant;

/// Convergence tolerance on the log-strike.
pub const STRIKE_TOL: f64 = 1e-12;
pub const MAX_ITERATIONS: usize = 50;
/// Below this time to maturity both strikes collapse onto the money.
pub const MIN_TAU: f64 = 1e-6;
/// Largest accepted `|d1|` or `|d2|` at a returned strike.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// Which of the two strikes to solve for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `k- = x - I^2 tau / 2`, where `d2 = 0`.
    ZeroVanna,
    /// `k+ = x + I^2 tau / 2`, where `d1 = 0`.
    DualZeroVanna,
}

impl Side {
    fn sign(self) -> f64 {
        match self {
            Side::ZeroVanna => -1.0,
            Side::DualZeroVanna => 1.0,
        }
    }
}

/// A solved strike with its smile value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrikeSolution {
    pub log_strike: f64,
    pub iv: f64,
    pub iterations: usize,
    /// `|d2|` for the zero-vanna strike, `|d1|` for the dual one.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroVannaPair {
    pub k_minus: f64,
    pub iv_minus: f64,
    pub k_plus: f64,
    pub iv_plus: f64,
    /// Iterations of the two solves combined.
    pub iterations: usize,
    pub residual_minus: f64,
    pub residual_plus: f64,
}

/// `d2` (zero-vanna side) or `d1` (dual side) at strike `k` with vol `iv`.
fn d_value(side: Side, x: f64, k: f64, iv: f64, tau: f64) -> f64 {
    let s = iv * libm::sqrt(tau);
    (x - k) / s + side.sign() * 0.5 * s
}

pub fn zero_vanna_strike(s: &SmileInterpolant) -> Result<StrikeSolution> {
    solve(s, Side::ZeroVanna)
}

pub fn dual_zero_vanna_strike(s: &SmileInterpolant) -> Result<StrikeSolution> {
    solve(s, Side::DualZeroVanna)
}

pub fn zero_vanna_pair(s: &SmileInterpolant) -> Result<ZeroVannaPair> {
    let m = zero_vanna_strike(s)?;
    let p = dual_zero_vanna_strike(s)?;
    Ok(ZeroVannaPair {
        k_minus: m.log_strike,
        iv_minus: m.iv,
        k_plus: p.log_strike,
        iv_plus: p.iv,
        iterations: m.iterations + p.iterations,
        residual_minus: m.residual,
        residual_plus: p.residual,
    })
}

/// `I(k+) - I(k-)`, standard errors of the two interpolated IVs combined as
/// if independent.
pub fn skew_diff(s: &SmileInterpolant) -> Result<Estimate> {
    let pair = zero_vanna_pair(s)?;
    let se_m = s.stderr_at(pair.k_minus)?;
    let se_p = s.stderr_at(pair.k_plus)?;
    Ok(Estimate {
        value: pair.iv_plus - pair.iv_minus,
        stderr: libm::hypot(se_m, se_p),
        n_paths: s.slice().n_paths,
    })
}

pub fn solve(s: &SmileInterpolant, side: Side) -> Result<StrikeSolution> {
    let x = s.log_spot();
    let tau = s.tau();
    if tau <= MIN_TAU {
        let iv = s.atm_iv()?;
        return Ok(StrikeSolution { log_strike: x, iv, iterations: 0, residual: d_value(side, x, x, iv, tau).abs() });
    }
    let sign = side.sign();
    let map = |k: f64| -> Result<(f64, f64)> {
        let iv = s.iv_at(k)?;
        Ok((x + sign * 0.5 * iv * iv * tau, iv))
    };

    let mut k = x;
    let mut last_step = f64::INFINITY;
    let mut iterations = 0;
    let fixed_point = loop {
        if iterations == MAX_ITERATIONS {
            break None;
        }
        iterations += 1;
        let (target, _) = match map(k) {
            Ok(v) => v,
            Err(_) => break None,
        };
        let mut step = target - k;
        if step.abs() > last_step {
            step *= 0.5;
        }
        k += step;
        last_step = step.abs();
        if last_step <= STRIKE_TOL {
            break Some(k);
        }
    };

    if let Some(k) = fixed_point {
        // a final evaluation puts the returned pair exactly on the map
        let iv = s.iv_at(k)?;
        let residual = d_value(side, x, k, iv, tau).abs();
        if residual <= RESIDUAL_TOL {
            return Ok(StrikeSolution { log_strike: k, iv, iterations, residual });
        }
    }
    bisect(s, side, iterations)
}

/// Bisection on `d(k, I(k))`, which decreases through zero across the domain
/// whenever a root exists.
fn bisect(s: &SmileInterpolant, side: Side, prior: usize) -> Result<StrikeSolution> {
    let x = s.log_spot();
    let tau = s.tau();
    let g = |k: f64| -> Result<f64> { Ok(d_value(side, x, k, s.iv_at(k)?, tau)) };
    let (mut lo, mut hi) = s.domain();
    let (mut g_lo, g_hi) = (g(lo)?, g(hi)?);
    if g_lo * g_hi > 0.0 {
        let best = if g_lo.abs() < g_hi.abs() { lo } else { hi };
        return Err(Error::NoConvergence {
            what: "zero-vanna strike (no sign change on smile domain)",
            best,
            residual: g_lo.abs().min(g_hi.abs()),
            iterations: prior,
        });
    }
    let mut iterations = prior;
    while hi - lo > STRIKE_TOL * (1.0 + x.abs()) && iterations < prior + 200 {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let g_mid = g(mid)?;
        if g_mid == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if (g_mid > 0.0) == (g_lo > 0.0) {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
        }
    }
    let k = 0.5 * (lo + hi);
    let iv = s.iv_at(k)?;
    let residual = d_value(side, x, k, iv, tau).abs();
    if residual <= RESIDUAL_TOL {
        Ok(StrikeSolution { log_strike: k, iv, iterations, residual })
    } else {
        Err(Error::NoConvergence { what: "zero-vanna strike", best: k, residual, iterations })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smile::{strike_grid, SmileSlice};
    use proptest::prelude::*;

    const X: f64 = 4.605_170_185_988_092;

    fn interp(tau: f64, f: impl Fn(f64) -> f64) -> SmileInterpolant {
        interp_scaled(0.2, tau, f)
    }

    fn interp_scaled(sigma0: f64, tau: f64, f: impl Fn(f64) -> f64) -> SmileInterpolant {
        let strikes = strike_grid(X, sigma0, tau, 41, 4.0);
        let ivs = strikes.iter().map(|&k| f(k - X)).collect();
        let se = Some(strikes.iter().map(|_| 1e-4).collect());
        SmileInterpolant::new(SmileSlice::new(0.0, tau, X, strikes, ivs, se).unwrap()).unwrap()
    }

    #[test]
    fn flat_smile_closed_form() {
        let s = interp(1.0, |_| 0.2);
        let pair = zero_vanna_pair(&s).unwrap();
        assert!((pair.k_minus - (X - 0.02)).abs() < 1e-14);
        assert!((pair.k_plus - (X + 0.02)).abs() < 1e-14);
        assert!((pair.iv_minus - 0.2).abs() < 1e-15 && (pair.iv_plus - 0.2).abs() < 1e-15);
        let d = skew_diff(&s).unwrap();
        assert!(d.value.abs() < 1e-15);
        assert!((d.stderr - 1e-4 * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn returned_pair_satisfies_identities() {
        let tau = 0.5;
        let s = interp(tau, |m| 0.22 - 0.3 * m + 0.5 * m * m);
        let pair = zero_vanna_pair(&s).unwrap();
        assert!(pair.residual_minus <= RESIDUAL_TOL && pair.residual_plus <= RESIDUAL_TOL);
        assert!((pair.k_minus - (X - 0.5 * pair.iv_minus.powi(2) * tau)).abs() < 1e-11);
        assert!((pair.k_plus - (X + 0.5 * pair.iv_plus.powi(2) * tau)).abs() < 1e-11);
        assert!(pair.k_minus < X && X < pair.k_plus);
        // negative skew: the dual strike sits on the lower-vol side
        assert!(pair.iv_plus < pair.iv_minus);
    }

    #[test]
    fn tiny_maturity_is_at_the_money() {
        let s = interp(1e-7, |m| 0.2 - 5.0 * m);
        let m = zero_vanna_strike(&s).unwrap();
        assert_eq!(m.log_strike, X);
        assert_eq!(m.iterations, 0);
        assert!((m.iv - 0.2).abs() < 1e-15);
    }

    #[test]
    fn bisection_fallback_agrees_with_iteration() {
        let s = interp(0.5, |m| 0.25 - 0.4 * m);
        for side in [Side::ZeroVanna, Side::DualZeroVanna] {
            let a = solve(&s, side).unwrap();
            let b = bisect(&s, side, 0).unwrap();
            assert!((a.log_strike - b.log_strike).abs() < 1e-11);
        }
    }

    #[test]
    fn narrow_domain_reports_failure() {
        let strikes: Vec<f64> = (0..5).map(|i| X + 0.001 * i as f64).collect();
        let s = SmileInterpolant::new(SmileSlice::new(0.0, 1.0, X, strikes, alloc::vec![0.2; 5], None).unwrap()).unwrap();
        // k- = x - 0.02 lies left of the domain
        assert!(zero_vanna_strike(&s).is_err());
    }

    proptest! {
        #[test]
        fn residuals_small_on_contracting_smiles(
            level in 0.1f64..0.5, slope in -0.8f64..0.8, curv in 0.0f64..2.0, tau in 0.002f64..3.0,
        ) {
            // capped at 1.5 * level so both roots lie inside x +/- 4 level sqrt(tau)
            let s = interp_scaled(level, tau, |m| (level + slope * m + curv * m * m).clamp(0.05, 1.5 * level));
            let pair = zero_vanna_pair(&s).unwrap();
            prop_assert!(pair.residual_minus <= RESIDUAL_TOL);
            prop_assert!(pair.residual_plus <= RESIDUAL_TOL);
        }
    }
}
