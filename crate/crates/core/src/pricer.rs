//! Monte Carlo call prices under rough Bergomi.
//!
//! Two estimators share one accumulator type:
//!
//! * plain: the payoff `(S_T - e^k)^+` averaged over paths, valid for either
//!   sampler backend;
//! * conditional: given the `W` path, the log-price is Gaussian with mean
//!   `x + rho int sigma dW - V/2` and variance `(1 - rho^2) V`, so each path
//!   contributes a Black-Scholes price. This needs the W-driven backend.
//!
//! Besides per-strike means, the accumulator tracks the full comoment matrix
//! across strikes, which gives standard errors of any linear combination of
//! prices on shared paths.

use alloc::vec;
use alloc::vec::Vec;

use crate::blackscholes;
use crate::error::{ensure, Error, Result};
use crate::estimate::Estimate;
use crate::exec::BatchExecutor;
use crate::normal;
use crate::rbergomi::{Backend, FbmTable, PathBatch, RBergomiParams, Sampler, TimeGrid, VarianceRule, DEFAULT_BATCH_SIZE};
use crate::smile::{self, SmileSlice, DEFAULT_STRIKE_COUNT, DEFAULT_STRIKE_WIDTH};

/// Prices below this multiple of `S0` are not inverted.
pub const MIN_RELATIVE_PRICE: f64 = 1e-12;
pub const DEFAULT_PATHS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PricingMode {
    Plain,
    #[default]
    Conditional,
}

/// How a smile is simulated and priced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PricingConfig {
    pub n_paths: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub backend: Backend,
    pub mode: PricingMode,
    pub n_strikes: usize,
    /// Half-width of the strike range in units of `sigma0 sqrt(tau)`.
    pub strike_width: f64,
    /// Overrides the default step policy when set.
    pub n_steps: Option<usize>,
    pub variance_rule: VarianceRule,
    /// Pair every path with its mirror image.
    pub antithetic: bool,
}

impl Default for PricingConfig {
    fn default() -> Self {
        Self {
            n_paths: DEFAULT_PATHS,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 1,
            backend: Backend::WDriven,
            mode: PricingMode::Conditional,
            n_strikes: DEFAULT_STRIKE_COUNT,
            strike_width: DEFAULT_STRIKE_WIDTH,
            n_steps: None,
            variance_rule: VarianceRule::LeftRiemann,
            antithetic: true,
        }
    }
}

impl PricingConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.n_paths >= 2, "n_paths", self.n_paths as f64)?;
        ensure(self.batch_size >= 1, "batch_size", self.batch_size as f64)?;
        ensure(self.n_strikes >= 4, "n_strikes", self.n_strikes as f64)?;
        ensure(self.strike_width > 0.0 && self.strike_width.is_finite(), "strike_width", self.strike_width)?;
        if let Some(n) = self.n_steps {
            ensure(n >= 1, "n_steps", n as f64)?;
        }
        if self.mode == PricingMode::Conditional && self.backend != Backend::WDriven {
            return Err(Error::BackendMismatch);
        }
        Ok(())
    }

    pub fn grid(&self, maturity: f64) -> Result<TimeGrid> {
        match self.n_steps {
            Some(n) => TimeGrid::with_steps(maturity, n),
            None => TimeGrid::for_maturity(maturity),
        }
    }

    pub fn strikes(&self, params: &RBergomiParams, tau: f64) -> Vec<f64> {
        smile::strike_grid(params.log_spot(), params.sigma0, tau, self.n_strikes, self.strike_width)
    }

    /// A sampler for `maturity` following this configuration.
    pub fn sampler(&self, params: &RBergomiParams, maturity: f64) -> Result<Sampler> {
        self.validate()?;
        let grid = self.grid(maturity)?;
        Ok(Sampler::new(*params, grid, self.backend)?
            .with_variance_rule(self.variance_rule)
            .with_antithetic(self.antithetic))
    }

    /// [`PricingConfig::sampler`] built from a shared fractional covariance table.
    pub fn sampler_with_table(&self, params: &RBergomiParams, maturity: f64, table: &FbmTable) -> Result<Sampler> {
        self.validate()?;
        let grid = self.grid(maturity)?;
        Ok(Sampler::with_table(*params, grid, self.backend, table)?
            .with_variance_rule(self.variance_rule)
            .with_antithetic(self.antithetic))
    }
}

/// Call prices on a strike grid for one maturity.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceGrid {
    pub maturity: f64,
    pub log_spot: f64,
    pub log_strikes: Vec<f64>,
    pub prices: Vec<Estimate>,
    /// Covariance of the price estimates (row-major, `len x len`).
    pub covariance: Vec<f64>,
}

impl PriceGrid {
    pub fn len(&self) -> usize {
        self.log_strikes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_strikes.is_empty()
    }

    /// `Cov(P_i, P_j)` of the estimated prices.
    pub fn price_covariance(&self, i: usize, j: usize) -> f64 {
        self.covariance[i * self.len() + j]
    }
}

/// Running mean vector and comoment matrix, mergeable in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMatrix {
    n: u64,
    mean: Vec<f64>,
    /// Upper triangle used; row-major `dim x dim`.
    comoment: Vec<f64>,
    delta: Vec<f64>,
}

impl MomentMatrix {
    pub fn new(dim: usize) -> Self {
        Self { n: 0, mean: vec![0.0; dim], comoment: vec![0.0; dim * dim], delta: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    #[inline]
    pub fn push(&mut self, v: &[f64]) {
        let d = self.dim();
        self.n += 1;
        let inv = 1.0 / self.n as f64;
        for i in 0..d {
            self.delta[i] = v[i] - self.mean[i];
            self.mean[i] += self.delta[i] * inv;
        }
        for i in 0..d {
            let di = self.delta[i];
            let row = &mut self.comoment[i * d..(i + 1) * d];
            for j in i..d {
                row[j] += di * (v[j] - self.mean[j]);
            }
        }
    }

    pub fn merge(&mut self, o: &MomentMatrix) {
        assert_eq!(self.dim(), o.dim());
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            self.n = o.n;
            self.mean.copy_from_slice(&o.mean);
            self.comoment.copy_from_slice(&o.comoment);
            return;
        }
        let d = self.dim();
        let (na, nb) = (self.n as f64, o.n as f64);
        let n = na + nb;
        for i in 0..d {
            self.delta[i] = o.mean[i] - self.mean[i];
        }
        let w = na * nb / n;
        for i in 0..d {
            for j in i..d {
                self.comoment[i * d + j] += o.comoment[i * d + j] + self.delta[i] * self.delta[j] * w;
            }
        }
        for i in 0..d {
            self.mean[i] += self.delta[i] * nb / n;
        }
        self.n += o.n;
    }

    /// Unbiased sample covariance of coordinates `i` and `j`.
    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        self.comoment[a * self.dim() + b] / (self.n - 1) as f64
    }
}

/// Accumulates per-path call values for a fixed strike grid.
#[derive(Debug, Clone)]
pub struct PriceAccumulator {
    mode: PricingMode,
    log_spot: f64,
    rho: f64,
    log_strikes: Vec<f64>,
    exp_strikes: Vec<f64>,
    moments: MomentMatrix,
    scratch: Vec<f64>,
    group: Vec<f64>,
}

impl PriceAccumulator {
    pub fn new(mode: PricingMode, params: &RBergomiParams, log_strikes: &[f64]) -> Self {
        Self {
            mode,
            log_spot: params.log_spot(),
            rho: params.rho,
            log_strikes: log_strikes.to_vec(),
            exp_strikes: log_strikes.iter().map(|&k| libm::exp(k)).collect(),
            moments: MomentMatrix::new(log_strikes.len()),
            scratch: vec![0.0; log_strikes.len()],
            group: vec![0.0; log_strikes.len()],
        }
    }

    pub fn count(&self) -> u64 {
        self.moments.count()
    }

    /// Adds every path of the batch; antithetic pairs enter as one averaged
    /// sample.
    pub fn push_batch(&mut self, batch: &PathBatch) -> Result<()> {
        if self.mode == PricingMode::Conditional && batch.w_integral.is_none() {
            return Err(Error::BackendMismatch);
        }
        for g in batch.groups() {
            let weight = 1.0 / g.len() as f64;
            self.group.iter_mut().for_each(|v| *v = 0.0);
            for p in g {
                self.path_values(batch, p);
                for (acc, &v) in self.group.iter_mut().zip(&self.scratch) {
                    *acc += weight * v;
                }
            }
            self.moments.push(&self.group);
        }
        Ok(())
    }

    fn path_values(&mut self, batch: &PathBatch, p: usize) {
        match self.mode {
            PricingMode::Plain => {
                let s = batch.terminal_spot[p];
                for (v, &fk) in self.scratch.iter_mut().zip(&self.exp_strikes) {
                    *v = (s - fk).max(0.0);
                }
            }
            PricingMode::Conditional => {
                let iw = batch.w_integral.as_ref().map_or(0.0, |w| w[p]);
                let v = batch.integrated_variance[p];
                let rho = self.rho;
                let x = self.log_spot + rho * iw - 0.5 * rho * rho * v;
                let total_vol = libm::sqrt((1.0 - rho * rho).max(0.0) * v);
                conditional_calls(x, total_vol, &self.log_strikes, &self.exp_strikes, &mut self.scratch);
            }
        }
    }

    pub fn merge(&mut self, other: &PriceAccumulator) {
        self.moments.merge(&other.moments);
    }

    pub fn finish(&self, maturity: f64) -> PriceGrid {
        let d = self.log_strikes.len();
        let n = self.moments.count();
        let inv_n = if n == 0 { 0.0 } else { 1.0 / n as f64 };
        let mut covariance = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                covariance[i * d + j] = self.moments.covariance(i, j) * inv_n;
            }
        }
        let prices = (0..d)
            .map(|i| Estimate {
                value: self.moments.mean()[i],
                stderr: libm::sqrt(covariance[i * d + i].max(0.0)),
                n_paths: n,
            })
            .collect();
        PriceGrid { maturity, log_spot: self.log_spot, log_strikes: self.log_strikes.clone(), prices, covariance }
    }
}

/// Black-Scholes calls for one conditional spot and total volatility,
/// assembled from the out-of-the-money side.
#[inline]
fn conditional_calls(x: f64, total_vol: f64, ks: &[f64], fks: &[f64], out: &mut [f64]) {
    let fx = libm::exp(x);
    if total_vol < blackscholes::DEGENERATE_TOTAL_VOL {
        for (o, &fk) in out.iter_mut().zip(fks) {
            *o = (fx - fk).max(0.0);
        }
        return;
    }
    let inv = 1.0 / total_vol;
    let half = 0.5 * total_vol;
    for ((o, &k), &fk) in out.iter_mut().zip(ks).zip(fks) {
        let d1 = (x - k) * inv + half;
        let d2 = d1 - total_vol;
        *o = if k >= x {
            (fx * normal::cdf(d1) - fk * normal::cdf(d2)).max(0.0)
        } else {
            (fk * normal::cdf(-d2) - fx * normal::cdf(-d1)).max(0.0) + (fx - fk)
        };
    }
}

fn accumulate<'a, I>(mode: PricingMode, params: &RBergomiParams, log_strikes: &[f64], batches: I) -> Result<PriceAccumulator>
where
    I: IntoIterator<Item = &'a PathBatch>,
{
    let mut acc = PriceAccumulator::new(mode, params, log_strikes);
    let mut maturity = None;
    for b in batches {
        maturity.get_or_insert(b.maturity);
        acc.push_batch(b)?;
    }
    Ok(acc)
}

/// Plain Monte Carlo call prices from batches of either backend.
pub fn mc_call_prices<'a, I>(batches: I, params: &RBergomiParams, log_strikes: &[f64]) -> PriceGrid
where
    I: IntoIterator<Item = &'a PathBatch>,
{
    let batches: Vec<&PathBatch> = batches.into_iter().collect();
    let maturity = batches.first().map_or(0.0, |b| b.maturity);
    let acc = accumulate(PricingMode::Plain, params, log_strikes, batches).expect("plain pricing cannot fail");
    acc.finish(maturity)
}

/// Conditional (mixing-formula) call prices; needs W-driven batches.
pub fn conditional_mc_call_prices<'a, I>(batches: I, params: &RBergomiParams, log_strikes: &[f64]) -> Result<PriceGrid>
where
    I: IntoIterator<Item = &'a PathBatch>,
{
    let batches: Vec<&PathBatch> = batches.into_iter().collect();
    let maturity = batches.first().map_or(0.0, |b| b.maturity);
    Ok(accumulate(PricingMode::Conditional, params, log_strikes, batches)?.finish(maturity))
}

/// Simulates and prices the configured strike grid, reducing batch by batch.
pub fn price_grid<E: BatchExecutor + ?Sized>(
    sampler: &Sampler,
    cfg: &PricingConfig,
    exec: &E,
) -> Result<PriceGrid> {
    cfg.validate()?;
    let params = sampler.params();
    let tau = sampler.grid().maturity();
    let strikes = cfg.strikes(params, tau);
    let parts = sampler.run(exec, cfg.seed, cfg.n_paths, cfg.batch_size, |b| {
        let mut acc = PriceAccumulator::new(cfg.mode, params, &strikes);
        acc.push_batch(b).map(|_| acc)
    });
    let mut total = PriceAccumulator::new(cfg.mode, params, &strikes);
    for part in parts {
        total.merge(&part?);
    }
    Ok(total.finish(tau))
}

/// A strike left out of a smile, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct DroppedStrike {
    pub log_strike: f64,
    pub reason: Error,
}

/// A smile built from simulated prices.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSmile {
    pub slice: SmileSlice,
    /// Index into the price grid of every slice node.
    pub grid_index: Vec<usize>,
    pub dropped: Vec<DroppedStrike>,
}

/// Inverts a price grid, dropping (and reporting) strikes whose price is
/// negligible or outside the no-arbitrage bounds.
pub fn slice_from_prices(grid: &PriceGrid, s0: f64) -> Result<ModelSmile> {
    let tau = grid.maturity;
    let mut strikes = Vec::with_capacity(grid.len());
    let mut ivs = Vec::with_capacity(grid.len());
    let mut stderr = Vec::with_capacity(grid.len());
    let mut grid_index = Vec::with_capacity(grid.len());
    let mut dropped = Vec::new();
    for (i, (&k, p)) in grid.log_strikes.iter().zip(&grid.prices).enumerate() {
        if p.value < MIN_RELATIVE_PRICE * s0 {
            dropped.push(DroppedStrike {
                log_strike: k,
                reason: Error::PriceOutOfBounds {
                    log_strike: k,
                    price: p.value,
                    lower: MIN_RELATIVE_PRICE * s0,
                    upper: s0,
                },
            });
            continue;
        }
        match smile::invert_with_stderr(grid.log_spot, k, tau, p.value, p.stderr) {
            Ok((iv, se)) => {
                strikes.push(k);
                ivs.push(iv);
                stderr.push(se);
                grid_index.push(i);
            }
            Err(reason) => dropped.push(DroppedStrike { log_strike: k, reason }),
        }
    }
    for d in &dropped {
        log::debug!("dropping log-strike {:.6} at T={}: {}", d.log_strike, tau, d.reason);
    }
    let n_paths = grid.prices.first().map_or(0, |p| p.n_paths);
    let mut slice = SmileSlice::new(0.0, tau, grid.log_spot, strikes, ivs, Some(stderr))?;
    slice.n_paths = n_paths;
    Ok(ModelSmile { slice, grid_index, dropped })
}

/// Simulate, price and invert one maturity.
pub fn smile_from_model<E: BatchExecutor + ?Sized>(
    params: &RBergomiParams,
    maturity: f64,
    cfg: &PricingConfig,
    exec: &E,
) -> Result<SmileSlice> {
    let sampler = cfg.sampler(params, maturity)?;
    let grid = price_grid(&sampler, cfg, exec)?;
    Ok(slice_from_prices(&grid, params.s0)?.slice)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blackscholes::{bs_price, BsPoint};
    use crate::exec::Sequential;

    // Oracle values from 50-digit quadrature of the Gaussian density:
    // 100 (N(0.1) - N(-0.1)) and 100 phi(0.1).
    const ATM_PRICE: f64 = 7.965_567_455_405_796;
    const ATM_VEGA: f64 = 39.695_254_747_701_18;

    #[test]
    fn black_scholes_oracles() {
        let x = libm::log(100.0);
        let p = BsPoint { log_spot: x, log_strike: x, tau: 1.0, vol: 0.2 };
        assert!((bs_price(&p) - ATM_PRICE).abs() < 1e-12);
        assert!((blackscholes::vega(&p) - ATM_VEGA).abs() < 1e-12);
        assert!((blackscholes::implied_vol(x, x, 1.0, 7.9656).unwrap() - 0.2).abs() < 1e-5);
    }

    #[test]
    fn moment_matrix_merge_matches_single_pass() {
        let rows: Vec<[f64; 3]> = (0..50)
            .map(|i| {
                let t = i as f64;
                [libm::sin(t), libm::cos(0.7 * t) * 3.0, t * 0.1]
            })
            .collect();
        let mut whole = MomentMatrix::new(3);
        rows.iter().for_each(|r| whole.push(r));
        let mut a = MomentMatrix::new(3);
        let mut b = MomentMatrix::new(3);
        rows[..17].iter().for_each(|r| a.push(r));
        rows[17..].iter().for_each(|r| b.push(r));
        a.merge(&b);
        for i in 0..3 {
            for j in 0..3 {
                let mi = rows.iter().map(|r| r[i]).sum::<f64>() / 50.0;
                let mj = rows.iter().map(|r| r[j]).sum::<f64>() / 50.0;
                let direct = rows.iter().map(|r| (r[i] - mi) * (r[j] - mj)).sum::<f64>() / 49.0;
                assert!((a.covariance(i, j) - direct).abs() < 1e-12);
                assert!((whole.covariance(i, j) - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conditional_call_matches_black_scholes() {
        let x = 4.6;
        let ks = [4.3, 4.6, 4.9];
        let fks: Vec<f64> = ks.iter().map(|&k| libm::exp(k)).collect();
        let mut out = [0.0; 3];
        conditional_calls(x, 0.25, &ks, &fks, &mut out);
        for (o, &k) in out.iter().zip(&ks) {
            let want = bs_price(&BsPoint { log_spot: x, log_strike: k, tau: 1.0, vol: 0.25 });
            assert!((o - want).abs() < 1e-12);
        }
    }

    fn bs_params(rho: f64) -> RBergomiParams {
        RBergomiParams { alpha: 0.0, ..RBergomiParams::benchmark(0.3, rho) }
    }

    #[test]
    fn zero_vol_of_vol_plain_prices_match_black_scholes() {
        let params = bs_params(-0.5);
        let cfg = PricingConfig { n_paths: 40_000, n_steps: Some(20), mode: PricingMode::Plain, ..Default::default() };
        let sampler = cfg.sampler(&params, 1.0).unwrap();
        let grid = price_grid(&sampler, &cfg, &Sequential).unwrap();
        let mid = grid.len() / 2;
        assert!(grid.prices[mid].within(ATM_PRICE, 3.0, 0.0), "{:?}", grid.prices[mid]);
        // prices decrease in strike up to noise
        for w in grid.prices.windows(2) {
            assert!(w[1].value <= w[0].value + 3.0 * w[0].stderr);
        }
    }

    #[test]
    fn deep_itm_call_is_forward_minus_strike() {
        let params = bs_params(-0.5);
        let cfg = PricingConfig { n_paths: 20_000, n_steps: Some(10), mode: PricingMode::Plain, ..Default::default() };
        let sampler = cfg.sampler(&params, 1.0).unwrap();
        let k = params.log_spot() - 10.0 * 0.2;
        let batch = sampler.sample_batch(3, 0, 20_000);
        let g = mc_call_prices([&batch], &params, &[k]);
        assert!(g.prices[0].within(100.0 - libm::exp(k), 3.0, 1e-12));
    }

    #[test]
    fn zero_vol_of_vol_conditional_is_deterministic_at_zero_correlation() {
        let params = bs_params(0.0);
        let cfg = PricingConfig { n_paths: 1000, n_steps: Some(20), antithetic: false, ..Default::default() };
        let sampler = cfg.sampler(&params, 1.0).unwrap();
        let grid = price_grid(&sampler, &cfg, &Sequential).unwrap();
        let mid = grid.len() / 2;
        assert!((grid.prices[mid].value - ATM_PRICE).abs() < 1e-11);
        assert!(grid.prices.iter().all(|p| p.stderr < 1e-10));
        let smile = slice_from_prices(&grid, 100.0).unwrap();
        assert!(smile.dropped.is_empty());
        assert!(smile.slice.ivs.iter().all(|&v| (v - 0.2).abs() < 1e-9));
    }

    #[test]
    fn conditional_needs_wdriven_batches() {
        let params = RBergomiParams::benchmark(0.3, -0.5);
        let grid = TimeGrid::with_steps(0.1, 10).unwrap();
        let s = Sampler::new(params, grid, Backend::Covariance).unwrap();
        let b = s.sample_batch(1, 0, 10);
        assert_eq!(conditional_mc_call_prices([&b], &params, &[4.6]), Err(Error::BackendMismatch));
        let cfg = PricingConfig { backend: Backend::Covariance, ..Default::default() };
        assert_eq!(cfg.validate(), Err(Error::BackendMismatch));
    }

    #[test]
    fn conditional_and_plain_agree_with_lower_error() {
        let params = RBergomiParams::benchmark(0.1, -0.6);
        let grid = TimeGrid::with_steps(0.25, 25).unwrap();
        let s = Sampler::new(params, grid, Backend::WDriven).unwrap();
        let b = s.sample_batch(5, 0, 30_000);
        let strikes = [4.5, 4.6, 4.65, 4.7];
        let plain = mc_call_prices([&b], &params, &strikes);
        let cond = conditional_mc_call_prices([&b], &params, &strikes).unwrap();
        for (p, c) in plain.prices.iter().zip(&cond.prices) {
            assert!((p.value - c.value).abs() <= 3.0 * libm::hypot(p.stderr, c.stderr));
            assert!(c.stderr < p.stderr);
        }
    }

    #[test]
    fn negligible_prices_are_dropped_and_reported() {
        let grid = PriceGrid {
            maturity: 1.0,
            log_spot: libm::log(100.0),
            log_strikes: vec![4.0, 4.3, 4.6, 4.9, 5.2, 9.0],
            prices: [4.0f64, 4.3, 4.6, 4.9, 5.2, 9.0]
                .iter()
                .map(|&k| {
                    let v = bs_price(&BsPoint { log_spot: libm::log(100.0), log_strike: k, tau: 1.0, vol: 0.2 });
                    Estimate { value: v, stderr: 0.0, n_paths: 10 }
                })
                .collect(),
            covariance: vec![0.0; 36],
        };
        let m = slice_from_prices(&grid, 100.0).unwrap();
        assert_eq!(m.slice.len(), 5);
        assert_eq!(m.dropped.len(), 1);
        assert_eq!(m.dropped[0].log_strike, 9.0);
        assert_eq!(m.grid_index, vec![0, 1, 2, 3, 4]);
    }
}
