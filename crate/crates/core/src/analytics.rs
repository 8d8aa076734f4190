//! Skew and covariance estimators, the Hurst estimator and maturity-scaling
//! regressions.
//!
//! A [`SkewReport`] summarises one `(params, T)` cell: the zero-vanna skew
//! difference `I(k+) - I(k-)`, the covariance between the return
//! `S_T/S_0 - 1` and the realized volatility, their normalisations by
//! `tau^{H+1/2}`, and ATM quantities. Smile and covariance are computed from
//! the same simulated paths.

use alloc::vec::Vec;

use crate::blackscholes::{self, BsPoint};
use crate::error::{ensure, Error, Result};
use crate::estimate::{Accumulator, CovAccumulator, Estimate};
use crate::exec::BatchExecutor;
use crate::pricer::{self, ModelSmile, PriceAccumulator, PriceGrid, PricingConfig};
use crate::rbergomi::{PathBatch, RBergomiParams, Sampler};
use crate::smile::SmileInterpolant;
use crate::strikes::{self, ZeroVannaPair};

/// Which covariance statistic to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceKind {
    /// `E[(S_T/S_0 - 1) v]`.
    #[default]
    Raw,
    /// Sample covariance with both means subtracted.
    Centered,
}

/// Return/realized-vol moments, mergeable in batch order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CovarianceStats {
    product: Accumulator,
    joint: CovAccumulator,
}

impl CovarianceStats {
    /// Antithetic pairs enter the product mean as one averaged sample; the
    /// centered covariance always uses individual paths.
    pub fn push_batch(&mut self, batch: &PathBatch, s0: f64) {
        for g in batch.groups() {
            let mut product = 0.0;
            for p in g.clone() {
                let (r, v) = (batch.terminal_spot[p] / s0 - 1.0, batch.realized_vol[p]);
                product += r * v;
                self.joint.push(r, v);
            }
            self.product.push(product / g.len() as f64);
        }
    }

    pub fn merge(&mut self, other: &CovarianceStats) {
        self.product.merge(&other.product);
        self.joint.merge(&other.joint);
    }

    pub fn estimate(&self, kind: CovarianceKind) -> Estimate {
        let raw = self.product.estimate();
        match kind {
            CovarianceKind::Raw => raw,
            CovarianceKind::Centered => Estimate { value: self.joint.covariance(), ..raw },
        }
    }
}

/// Raw covariance estimate `E[(S_T/S_0 - 1) v]` over a batch stream.
pub fn covariance_estimate<'a, I>(batches: I, s0: f64) -> Estimate
where
    I: IntoIterator<Item = &'a PathBatch>,
{
    covariance_estimate_with(batches, s0, CovarianceKind::Raw)
}

pub fn covariance_estimate_with<'a, I>(batches: I, s0: f64, kind: CovarianceKind) -> Estimate
where
    I: IntoIterator<Item = &'a PathBatch>,
{
    let mut stats = CovarianceStats::default();
    for b in batches {
        stats.push_batch(b, s0);
    }
    stats.estimate(kind)
}

/// Prices and covariance moments of one cell, from shared paths.
#[derive(Debug, Clone)]
pub struct CellMoments {
    pub prices: PriceGrid,
    pub covariance: CovarianceStats,
}

pub fn simulate_cell<E: BatchExecutor + ?Sized>(sampler: &Sampler, cfg: &PricingConfig, exec: &E) -> Result<CellMoments> {
    cfg.validate()?;
    let params = sampler.params();
    let tau = sampler.grid().maturity();
    let strikes = cfg.strikes(params, tau);
    let parts = sampler.run(exec, cfg.seed, cfg.n_paths, cfg.batch_size, |b| {
        let mut acc = PriceAccumulator::new(cfg.mode, params, &strikes);
        acc.push_batch(b)?;
        let mut cov = CovarianceStats::default();
        cov.push_batch(b, params.s0);
        Ok::<_, Error>((acc, cov))
    });
    let mut prices = PriceAccumulator::new(cfg.mode, params, &strikes);
    let mut covariance = CovarianceStats::default();
    for part in parts {
        let (p, c) = part?;
        prices.merge(&p);
        covariance.merge(&c);
    }
    Ok(CellMoments { prices: prices.finish(tau), covariance })
}

/// One row of the skew/covariance comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewReport {
    pub maturity: f64,
    pub hurst: f64,
    pub k_minus: f64,
    pub k_plus: f64,
    pub iv_minus: Estimate,
    pub iv_plus: Estimate,
    pub covariance: Estimate,
    /// `I(k+) - I(k-)`; the error accounts for the two IVs sharing paths.
    pub skew_diff: Estimate,
    /// `skew_diff / tau^{H+1/2}`.
    pub ratio_skew: Estimate,
    /// `covariance / tau^{H+1/2}`.
    pub ratio_cov: Estimate,
    pub atm_iv: f64,
    pub atm_skew: f64,
    /// `atm_iv^2 tau atm_skew`.
    pub slope_approx: f64,
    /// `sigma0^2 tau atm_skew`.
    pub slope_approx_sigma0: f64,
    pub pair: ZeroVannaPair,
    /// Strikes left out of the smile.
    pub dropped: usize,
}

impl SkewReport {
    /// `(I+ - I-) / Cov`.
    pub fn skew_cov_ratio(&self) -> f64 {
        self.skew_diff.value / self.covariance.value
    }

    /// Delta-method standard error of [`SkewReport::skew_cov_ratio`], with
    /// the two estimates treated as independent.
    pub fn skew_cov_ratio_stderr(&self) -> f64 {
        let r = self.skew_cov_ratio();
        let a = self.skew_diff.stderr / self.skew_diff.value;
        let b = self.covariance.stderr / self.covariance.value;
        r.abs() * libm::hypot(a, b)
    }
}

/// Options for [`skew_report`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SkewConfig {
    pub pricing: PricingConfig,
    pub covariance: CovarianceKind,
}

pub fn skew_report<E: BatchExecutor + ?Sized>(
    params: &RBergomiParams,
    maturity: f64,
    cfg: &SkewConfig,
    exec: &E,
) -> Result<SkewReport> {
    let sampler = cfg.pricing.sampler(params, maturity)?;
    skew_report_from_sampler(&sampler, cfg, exec)
}

pub fn skew_report_from_sampler<E: BatchExecutor + ?Sized>(
    sampler: &Sampler,
    cfg: &SkewConfig,
    exec: &E,
) -> Result<SkewReport> {
    let cell = simulate_cell(sampler, &cfg.pricing, exec)?;
    report_from_moments(sampler.params(), &cell, cfg.covariance)
}

/// Assembles a report from simulated cell moments.
pub fn report_from_moments(params: &RBergomiParams, cell: &CellMoments, kind: CovarianceKind) -> Result<SkewReport> {
    let grid = &cell.prices;
    let tau = grid.maturity;
    let smile = pricer::slice_from_prices(grid, params.s0)?;
    let interp = SmileInterpolant::new(smile.slice.clone())?;
    let pair = strikes::zero_vanna_pair(&interp)?;
    let n = grid.prices.first().map_or(0, |p| p.n_paths);

    let iv_minus = Estimate { value: pair.iv_minus, stderr: interp.stderr_at(pair.k_minus)?, n_paths: n };
    let iv_plus = Estimate { value: pair.iv_plus, stderr: interp.stderr_at(pair.k_plus)?, n_paths: n };
    let diff_se = iv_difference_stderr(&smile, &interp, grid, pair.k_plus, pair.k_minus)?;
    let skew_diff = Estimate { value: pair.iv_plus - pair.iv_minus, stderr: diff_se, n_paths: n };
    let covariance = cell.covariance.estimate(kind);

    let scale = 1.0 / libm::pow(tau, params.hurst + 0.5);
    let atm_iv = interp.atm_iv()?;
    let atm_skew = interp.atm_skew()?;
    Ok(SkewReport {
        maturity: tau,
        hurst: params.hurst,
        k_minus: pair.k_minus,
        k_plus: pair.k_plus,
        iv_minus,
        iv_plus,
        covariance,
        skew_diff,
        ratio_skew: skew_diff.scale(scale),
        ratio_cov: covariance.scale(scale),
        atm_iv,
        atm_skew,
        slope_approx: atm_iv * atm_iv * tau * atm_skew,
        slope_approx_sigma0: params.sigma0 * params.sigma0 * tau * atm_skew,
        pair,
        dropped: smile.dropped.len(),
    })
}

/// Standard error of `I(a) - I(b)` by the delta method on the node prices,
/// using their full covariance. Each IV is linearised as the linear
/// interpolation of node IVs, and each node IV as `price / vega`.
fn iv_difference_stderr(smile: &ModelSmile, interp: &SmileInterpolant, grid: &PriceGrid, a: f64, b: f64) -> Result<f64> {
    let slice = &smile.slice;
    let tau = slice.tau();
    let mut coef = alloc::vec![0.0; grid.len()];
    for (k, sign) in [(a, 1.0), (b, -1.0)] {
        let (i, w0, w1) = interp.bracket(k)?;
        for (node, w) in [(i, w0), (i + 1, w1)] {
            let vega = blackscholes::vega(&BsPoint {
                log_spot: slice.log_spot,
                log_strike: slice.strikes[node],
                tau,
                vol: slice.ivs[node],
            });
            coef[smile.grid_index[node]] += sign * w / vega;
        }
    }
    let mut var = 0.0;
    for (i, &ci) in coef.iter().enumerate() {
        if ci == 0.0 {
            continue;
        }
        for (j, &cj) in coef.iter().enumerate() {
            var += ci * cj * grid.price_covariance(i, j);
        }
    }
    Ok(libm::sqrt(var.max(0.0)))
}

/// The two-maturity Hurst estimate and its inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HurstEstimate {
    pub t1: f64,
    pub t2: f64,
    pub hurst: f64,
    /// Delta-method error from the skew differences, maturities independent.
    pub stderr: f64,
    pub skew_diff1: Estimate,
    pub skew_diff2: Estimate,
    pub atm_iv1: f64,
    pub atm_iv2: f64,
}

/// `-1/2 + ln[(d1/d2) (i2^2/i1^2)] / ln(t1/t2)`.
pub fn hurst_from_inputs(t1: f64, d1: f64, i1: f64, t2: f64, d2: f64, i2: f64) -> f64 {
    -0.5 + libm::log((d1 / d2) * (i2 * i2) / (i1 * i1)) / libm::log(t1 / t2)
}

pub fn hurst_estimate(r1: &SkewReport, r2: &SkewReport) -> Result<HurstEstimate> {
    let (t1, t2) = (r1.maturity, r2.maturity);
    ensure(t1 != t2, "maturity", t2)?;
    let (d1, d2) = (r1.skew_diff, r2.skew_diff);
    if d1.value == 0.0 || d2.value == 0.0 || (d1.value > 0.0) != (d2.value > 0.0) {
        return Err(Error::UndefinedEstimate("skew differences are zero or of opposite sign"));
    }
    if d1.value.abs() < 2.0 * d1.stderr || d2.value.abs() < 2.0 * d2.stderr {
        return Err(Error::UndefinedEstimate("skew difference within two standard errors of zero"));
    }
    let hurst = hurst_from_inputs(t1, d1.value, r1.atm_iv, t2, d2.value, r2.atm_iv);
    let rel = libm::hypot(d1.stderr / d1.value, d2.stderr / d2.value);
    Ok(HurstEstimate {
        t1,
        t2,
        hurst,
        stderr: rel / libm::log(t1 / t2).abs(),
        skew_diff1: d1,
        skew_diff2: d2,
        atm_iv1: r1.atm_iv,
        atm_iv2: r2.atm_iv,
    })
}

/// Least-squares slope and intercept of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let n = x.len().min(y.len());
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let sxy: f64 = x[..n].iter().zip(&y[..n]).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x[..n].iter().map(|a| (a - mx) * (a - mx)).sum();
    ensure(sxx > 0.0, "x", sxx)?;
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Slope of `ln|y|` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    let lx: Vec<f64> = x.iter().map(|&v| libm::log(v)).collect();
    let ly: Vec<f64> = y.iter().map(|&v| libm::log(v.abs())).collect();
    Ok(linear_fit(&lx, &ly)?.0)
}

pub const MIN_LADDER_POINTS: usize = 4;
/// Minimum `log10(T_max / T_min)` of a maturity ladder.
pub const MIN_LADDER_DECADES: f64 = 1.5;

/// Maturity-scaling regressions over a ladder of reports.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRates {
    /// Slope of `ln|skew_diff - covariance|` against `ln tau`.
    pub error_slope: f64,
    /// Slope of `ln|atm_skew|` against `ln tau`.
    pub atm_skew_slope: f64,
    pub maturities: Vec<f64>,
}

impl ConvergenceRates {
    pub fn from_reports(reports: &[SkewReport]) -> Result<Self> {
        let maturities: Vec<f64> = reports.iter().map(|r| r.maturity).collect();
        check_ladder(&maturities)?;
        let errors: Vec<f64> = reports.iter().map(|r| r.skew_diff.value - r.covariance.value).collect();
        let skews: Vec<f64> = reports.iter().map(|r| r.atm_skew).collect();
        Ok(Self {
            error_slope: log_log_slope(&maturities, &errors)?,
            atm_skew_slope: log_log_slope(&maturities, &skews)?,
            maturities,
        })
    }
}

fn check_ladder(maturities: &[f64]) -> Result<()> {
    let n = maturities.len();
    if n < MIN_LADDER_POINTS {
        return Err(Error::InsufficientData { needed: MIN_LADDER_POINTS, got: n });
    }
    let lo = maturities.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = maturities.iter().copied().fold(0.0, f64::max);
    ensure(lo > 0.0, "maturity", lo)?;
    if libm::log10(hi / lo) < MIN_LADDER_DECADES {
        // report how many decade-spanning points were available: none
        return Err(Error::InsufficientData { needed: MIN_LADDER_POINTS, got: 0 });
    }
    Ok(())
}

/// Runs one report per maturity and regresses the scaling laws.
pub fn convergence_rate_check<E: BatchExecutor + ?Sized>(
    params: &RBergomiParams,
    maturities: &[f64],
    cfg: &SkewConfig,
    exec: &E,
) -> Result<ConvergenceRates> {
    check_ladder(maturities)?;
    let reports = maturities
        .iter()
        .map(|&t| skew_report(params, t, cfg, exec))
        .collect::<Result<Vec<_>>>()?;
    ConvergenceRates::from_reports(&reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;
    use crate::pricer::PricingMode;
    use crate::rbergomi::Backend;
    use proptest::prelude::*;

    fn synthetic(t: f64, d: f64, iv: f64, se: f64) -> SkewReport {
        let e = Estimate { value: d, stderr: se, n_paths: 1 };
        SkewReport {
            maturity: t,
            hurst: 0.0,
            k_minus: 0.0,
            k_plus: 0.0,
            iv_minus: Estimate::exact(iv),
            iv_plus: Estimate::exact(iv),
            covariance: e,
            skew_diff: e,
            ratio_skew: e,
            ratio_cov: e,
            atm_iv: iv,
            atm_skew: d,
            slope_approx: 0.0,
            slope_approx_sigma0: 0.0,
            pair: ZeroVannaPair {
                k_minus: 0.0,
                iv_minus: iv,
                k_plus: 0.0,
                iv_plus: iv,
                iterations: 0,
                residual_minus: 0.0,
                residual_plus: 0.0,
            },
            dropped: 0,
        }
    }

    proptest! {
        #[test]
        fn hurst_estimator_inverts_power_law(h in 0.01f64..0.99, c in -5.0f64..-1e-3, iv in 0.05f64..1.0,
                                              t1 in 1e-3f64..0.5, ratio in 1.5f64..100.0) {
            let t2 = t1 * ratio;
            let d = |t: f64| c * libm::pow(t, h + 0.5);
            let r1 = synthetic(t1, d(t1), iv, 0.0);
            let r2 = synthetic(t2, d(t2), iv, 0.0);
            let est = hurst_estimate(&r1, &r2).unwrap();
            prop_assert!((est.hurst - h).abs() < 1e-12, "{} vs {h}", est.hurst);
        }
    }

    #[test]
    fn hurst_estimator_rejects_bad_inputs() {
        let a = synthetic(0.01, -1e-3, 0.2, 1e-5);
        assert!(matches!(hurst_estimate(&a, &a), Err(Error::InvalidParameter { .. })));
        let b = synthetic(0.04, 2e-3, 0.2, 1e-5);
        assert!(matches!(hurst_estimate(&a, &b), Err(Error::UndefinedEstimate(_))));
        let noisy = synthetic(0.04, -2e-3, 0.2, 1.5e-3);
        assert!(matches!(hurst_estimate(&a, &noisy), Err(Error::UndefinedEstimate(_))));
    }

    #[test]
    fn hurst_estimator_accounts_for_atm_level() {
        // d_i = I_i^2 c t_i^{H+1/2} with different ATM levels
        let (h, c) = (0.3, -0.02);
        let (i1, i2) = (0.18, 0.23);
        let r1 = synthetic(0.01, i1 * i1 * c * libm::pow(0.01, h + 0.5), i1, 0.0);
        let r2 = synthetic(0.1, i2 * i2 * c * libm::pow(0.1, h + 0.5), i2, 0.0);
        assert!((hurst_estimate(&r1, &r2).unwrap().hurst - h).abs() < 1e-13);
    }

    #[test]
    fn ladder_requirements() {
        let good: Vec<SkewReport> = [0.001, 0.01, 0.05, 0.1]
            .iter()
            .map(|&t| synthetic(t, -0.01 * libm::pow(t, 0.3), 0.2, 0.0))
            .collect();
        let rates = ConvergenceRates::from_reports(&good).unwrap();
        assert!((rates.atm_skew_slope - 0.3).abs() < 1e-12);
        assert!(matches!(
            ConvergenceRates::from_reports(&good[..3]),
            Err(Error::InsufficientData { needed: 4, got: 3 })
        ));
        let narrow: Vec<SkewReport> = [0.01, 0.02, 0.05, 0.1].iter().map(|&t| synthetic(t, -0.01, 0.2, 0.0)).collect();
        assert!(matches!(ConvergenceRates::from_reports(&narrow), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn linear_fit_recovers_line() {
        let x = [1.0, 2.0, 4.0, 7.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 0.5 * v).collect();
        let (s, c) = linear_fit(&x, &y).unwrap();
        assert!((s + 0.5).abs() < 1e-14 && (c - 3.0).abs() < 1e-14);
    }

    #[test]
    fn covariance_flavours_agree_in_the_mean() {
        let params = RBergomiParams::benchmark(0.3, -0.7);
        let cfg = PricingConfig { n_paths: 20_000, n_steps: Some(20), ..Default::default() };
        let sampler = cfg.sampler(&params, 0.5).unwrap();
        let batch = sampler.sample_batch(2, 0, 20_000);
        let raw = covariance_estimate([&batch], 100.0);
        let centered = covariance_estimate_with([&batch], 100.0, CovarianceKind::Centered);
        assert!(raw.value < 0.0 && raw.value.abs() > 3.0 * raw.stderr);
        // they differ by the sample mean of the return times that of v
        assert!((raw.value - centered.value).abs() < 3.0 * raw.stderr);
    }

    #[test]
    fn uncorrelated_model_has_no_skew_or_covariance() {
        let params = RBergomiParams::benchmark(0.3, 0.0);
        let cfg = SkewConfig {
            pricing: PricingConfig { n_paths: 20_000, n_steps: Some(25), ..Default::default() },
            ..Default::default()
        };
        let r = skew_report(&params, 0.1, &cfg, &Sequential).unwrap();
        assert!(r.skew_diff.value.abs() <= 3.0 * r.skew_diff.stderr + 1e-12, "{:?}", r.skew_diff);
        assert!(r.covariance.within(0.0, 3.0, 0.0));
        assert!(r.pair.k_minus < r.k_plus);
    }

    #[test]
    fn negative_correlation_gives_negative_skew_and_covariance() {
        let params = RBergomiParams::benchmark(0.3, -0.8);
        let cfg = SkewConfig {
            pricing: PricingConfig { n_paths: 20_000, n_steps: Some(50), ..Default::default() },
            ..Default::default()
        };
        let r = skew_report(&params, 0.25, &cfg, &Sequential).unwrap();
        assert!(r.skew_diff.value < -3.0 * r.skew_diff.stderr);
        assert!(r.covariance.value < -3.0 * r.covariance.stderr);
        assert!(r.atm_skew < 0.0 && r.slope_approx < 0.0);
        // the shared-path error of the difference is far below the
        // independent combination
        assert!(r.skew_diff.stderr < 0.5 * libm::hypot(r.iv_minus.stderr, r.iv_plus.stderr));
        let ratio = r.skew_cov_ratio();
        assert!(ratio > 0.5 && ratio < 1.5, "{ratio}");
    }

    #[test]
    fn plain_pricing_on_covariance_backend_works() {
        let params = RBergomiParams::benchmark(0.5, -0.5);
        let cfg = SkewConfig {
            pricing: PricingConfig {
                n_paths: 20_000,
                n_steps: Some(20),
                backend: Backend::Covariance,
                mode: PricingMode::Plain,
                ..Default::default()
            },
            ..Default::default()
        };
        let r = skew_report(&params, 0.5, &cfg, &Sequential).unwrap();
        assert!(r.atm_iv > 0.15 && r.atm_iv < 0.25);
    }
}
