//! Exact-in-law simulation of the rough Bergomi model on a uniform grid.
//!
//! The variance is `sigma0^2 exp(alpha W^H_t - alpha^2 t^{2H} / 2)` where
//! `W^H_t = sqrt(2H) int_0^t (t-s)^{H-1/2} dW_s` is a Riemann-Liouville
//! fractional Brownian motion. Two samplers are provided:
//!
//! * [`Backend::Covariance`] draws `(W^H_{t_i}, B_{t_i})` jointly from their
//!   covariance, where `B` is the correlated price driver.
//! * [`Backend::WDriven`] draws the increments of `W` together with `W^H`
//!   and an independent Brownian motion, driving the price with
//!   `rho dW + sqrt(1 - rho^2) dB`. Its batches also carry `int sigma dW`,
//!   which the conditional pricer needs.
//!
//! Both use left-point Euler for the log-price, so the simulated spot is an
//! exact martingale on the grid.

use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ensure, Result};
use crate::exec::BatchExecutor;
use crate::linalg::{lower_times_batch, Cholesky};
use crate::quadrature::GaussLegendre;

/// Paths per RNG stream unless configured otherwise.
pub const DEFAULT_BATCH_SIZE: usize = 65_536;
/// Paths pushed through one matrix product inside a batch.
const CHUNK: usize = 256;
/// Minimum number of steps under the default grid policy.
pub const MIN_STEPS: usize = 100;
pub const STEPS_PER_YEAR: f64 = 500.0;

/// Model parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RBergomiParams {
    pub s0: f64,
    pub sigma0: f64,
    /// Vol-of-vol.
    pub alpha: f64,
    pub hurst: f64,
    pub rho: f64,
}

impl RBergomiParams {
    pub fn new(s0: f64, sigma0: f64, alpha: f64, hurst: f64, rho: f64) -> Result<Self> {
        let p = Self { s0, sigma0, alpha, hurst, rho };
        p.validate()?;
        Ok(p)
    }

    /// `S0 = 100, sigma0 = 0.2, alpha = 0.8` with the given `H` and `rho`.
    pub fn benchmark(hurst: f64, rho: f64) -> Self {
        Self { s0: 100.0, sigma0: 0.2, alpha: 0.8, hurst, rho }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.s0 > 0.0 && self.s0.is_finite(), "s0", self.s0)?;
        ensure(self.sigma0 > 0.0 && self.sigma0.is_finite(), "sigma0", self.sigma0)?;
        ensure(self.alpha >= 0.0 && self.alpha.is_finite(), "alpha", self.alpha)?;
        ensure(self.hurst > 0.0 && self.hurst < 1.0, "hurst", self.hurst)?;
        ensure(self.rho.abs() <= 1.0, "rho", self.rho)?;
        Ok(())
    }

    pub fn log_spot(&self) -> f64 {
        libm::log(self.s0)
    }
}

/// Uniform grid `t_i = i T / n` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    maturity: f64,
    n_steps: usize,
}

impl TimeGrid {
    /// `max(ceil(500 T), 100)` steps.
    pub fn for_maturity(maturity: f64) -> Result<Self> {
        ensure(maturity > 0.0 && maturity.is_finite(), "maturity", maturity)?;
        let raw = STEPS_PER_YEAR * maturity;
        // 500 * 0.1 is 50.000000000000007 in floating point
        let steps = libm::ceil(raw - 1e-9 * raw) as usize;
        Ok(Self { maturity, n_steps: steps.max(MIN_STEPS) })
    }

    pub fn with_steps(maturity: f64, n_steps: usize) -> Result<Self> {
        ensure(maturity > 0.0 && maturity.is_finite(), "maturity", maturity)?;
        ensure(n_steps >= 1, "n_steps", n_steps as f64)?;
        Ok(Self { maturity, n_steps })
    }

    pub fn maturity(&self) -> f64 {
        self.maturity
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.maturity / self.n_steps as f64
    }

    /// Node `t_i`, `i = 0..=n`.
    pub fn time(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.maturity
        } else {
            self.maturity * i as f64 / self.n_steps as f64
        }
    }
}

/// `E[W^H_t W^H_s]` for the Riemann-Liouville process.
///
/// For `s < t` this is `s^{2H} int_0^1 2H (1-x)^{H-1/2} (t/s - x)^{H-1/2} dx`.
/// The substitution `u = (1-x)^{H+1/2}` turns it into
/// `2H/(H+1/2) int_0^1 (t/s - 1 + u^{1/(H+1/2)})^{H-1/2} du`, which is
/// integrated with a Gauss-Legendre rule on panels graded towards `u = 0`.
pub fn fbm_cov(t: f64, s: f64, hurst: f64) -> f64 {
    FbmKernel::new(hurst).cov(t, s)
}

/// Gauss-Legendre nodes per panel of the graded rule.
const PANEL_NODES: usize = 16;
/// Ratio between consecutive panel endpoints.
const PANEL_RATIO: f64 = 0.25;
const MAX_PANELS: usize = 64;

/// [`fbm_cov`] with the graded quadrature rule precomputed for one `H`.
///
/// Panels `[r^{j+1}, r^j]` are fixed, so the powers `u^{1/(H+1/2)}` at their
/// nodes are computed once; only `(delta + u^p)^{H-1/2}` depends on the pair
/// of times.
#[derive(Debug, Clone)]
pub struct FbmKernel {
    hurst: f64,
    /// `u^p` and weight per node of the graded panels, panel-major.
    panel_up: Vec<f64>,
    panel_w: Vec<f64>,
    /// Nodes of the innermost panel `[0, 1]`, rescaled at use.
    base_up: Vec<f64>,
    base_w: Vec<f64>,
}

impl FbmKernel {
    pub fn new(hurst: f64) -> Self {
        let rule = GaussLegendre::new(PANEL_NODES);
        let p = 1.0 / (hurst + 0.5);
        let mut panel_up = Vec::with_capacity(MAX_PANELS * PANEL_NODES);
        let mut panel_w = Vec::with_capacity(MAX_PANELS * PANEL_NODES);
        let mut hi = 1.0;
        for _ in 0..MAX_PANELS {
            let lo = hi * PANEL_RATIO;
            let (half, mid) = (0.5 * (hi - lo), 0.5 * (hi + lo));
            for (&x, &w) in rule.nodes().iter().zip(rule.weights()) {
                panel_up.push(libm::pow(mid + half * x, p));
                panel_w.push(w * half);
            }
            hi = lo;
        }
        let base_up = rule.nodes().iter().map(|&x| libm::pow(0.5 * (x + 1.0), p)).collect();
        let base_w = rule.weights().iter().map(|&w| 0.5 * w).collect();
        Self { hurst, panel_up, panel_w, base_up, base_w }
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn cov(&self, t: f64, s: f64) -> f64 {
        let hurst = self.hurst;
        let (t, s) = if s <= t { (t, s) } else { (s, t) };
        if s <= 0.0 {
            return 0.0;
        }
        if s == t {
            return libm::pow(t, 2.0 * hurst);
        }
        let q = hurst + 0.5;
        libm::pow(s, 2.0 * hurst) * 2.0 * hurst / q * self.integral(t / s - 1.0)
    }

    /// `int_0^1 (delta + u^p)^{H-1/2} du` for `delta > 0`.
    fn integral(&self, delta: f64) -> f64 {
        let a = self.hurst - 0.5;
        let p = 1.0 / (self.hurst + 0.5);
        // On [0, floor] the non-analytic u^p term is below rounding relative
        // to the whole integral.
        let d = delta.min(1.0);
        let floor = libm::pow(1e-12 * d * libm::sqrt(d), 1.0 / (p + 1.0));
        let panels = if floor >= 1.0 {
            0
        } else {
            (libm::ceil(libm::log(floor) / libm::log(PANEL_RATIO)) as usize).min(MAX_PANELS)
        };
        let f = |up: f64| libm::exp(a * libm::log(delta + up));
        let m = panels * PANEL_NODES;
        let mut total = 0.0;
        for (&up, &w) in self.panel_up[..m].iter().zip(&self.panel_w[..m]) {
            total += w * f(up);
        }
        let width = libm::pow(PANEL_RATIO, panels as f64);
        let scale = libm::pow(width, p);
        let mut inner = 0.0;
        for (&up, &w) in self.base_up.iter().zip(&self.base_w) {
            inner += w * f(scale * up);
        }
        total + width * inner
    }
}

/// `E[W^H_i W^H_j]` at integer times `1..=n`.
///
/// On a uniform grid with step `dt` the covariance of the nodes is
/// `dt^{2H}` times this table, so one table serves every maturity whose
/// step count does not exceed `n`.
#[derive(Debug, Clone)]
pub struct FbmTable {
    hurst: f64,
    n: usize,
    values: Vec<f64>,
}

impl FbmTable {
    pub fn new(hurst: f64, n: usize) -> Self {
        let kernel = FbmKernel::new(hurst);
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let c = kernel.cov((i + 1) as f64, (j + 1) as f64);
                values[i * n + j] = c;
                values[j * n + i] = c;
            }
        }
        Self { hurst, n, values }
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `E[W^H_{i+1} W^H_{j+1}]` (0-based indices).
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Node covariance `E[W^H_{t_{i+1}} W^H_{t_{j+1}}]` on `grid`.
    pub fn grid_matrix(&self, grid: &TimeGrid) -> Vec<f64> {
        let n = grid.n_steps();
        assert!(n <= self.n, "table covers {} steps, grid needs {n}", self.n);
        let scale = libm::pow(grid.dt(), 2.0 * self.hurst);
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = scale * self.values[i * self.n + j];
            }
        }
        out
    }
}

/// `E[W^H_t B_s]` where `B` is the price driver with correlation `rho`
/// to the `W` underlying `W^H`.
pub fn wh_b_cov(t: f64, s: f64, hurst: f64, rho: f64) -> f64 {
    if t <= 0.0 || s <= 0.0 {
        return 0.0;
    }
    let q = hurst + 0.5;
    let m = t.min(s);
    rho * libm::sqrt(2.0 * hurst) / q * (libm::pow(t, q) - libm::pow(t - m, q))
}

/// Covariance of `(W^H_{t_1..n}, B_{t_1..n})` and its Cholesky factor.
#[derive(Debug, Clone)]
pub struct JointCovariance {
    n: usize,
    matrix: Vec<f64>,
    factor: Cholesky,
}

/// Assembles the `2n x 2n` joint covariance of the fractional driver and
/// the price driver on the grid nodes `t_1..t_n` and factorizes it.
pub fn build_joint_covariance(grid: &TimeGrid, params: &RBergomiParams) -> Result<JointCovariance> {
    params.validate()?;
    let table = FbmTable::new(params.hurst, grid.n_steps());
    build_joint_covariance_with(grid, params, &table)
}

/// [`build_joint_covariance`] reusing a precomputed fractional covariance table.
pub fn build_joint_covariance_with(grid: &TimeGrid, params: &RBergomiParams, table: &FbmTable) -> Result<JointCovariance> {
    params.validate()?;
    ensure(table.hurst() == params.hurst, "hurst", params.hurst)?;
    let matrix = joint_covariance_matrix(grid, params, table);
    let n = grid.n_steps();
    let factor = Cholesky::factor(&matrix, 2 * n)?;
    Ok(JointCovariance { n, matrix, factor })
}

/// The unfactorized `2n x 2n` matrix (row-major).
pub fn joint_covariance_matrix(grid: &TimeGrid, params: &RBergomiParams, table: &FbmTable) -> Vec<f64> {
    let n = grid.n_steps();
    let m = 2 * n;
    let h = params.hurst;
    let ww = table.grid_matrix(grid);
    let mut a = vec![0.0; m * m];
    let t = |i: usize| grid.time(i + 1);
    for i in 0..n {
        for j in 0..=i {
            let c = ww[i * n + j];
            a[i * m + j] = c;
            a[j * m + i] = c;
            let b = t(i).min(t(j));
            a[(n + i) * m + n + j] = b;
            a[(n + j) * m + n + i] = b;
        }
        for j in 0..n {
            let c = wh_b_cov(t(i), t(j), h, params.rho);
            a[i * m + n + j] = c;
            a[(n + j) * m + i] = c;
        }
    }
    a
}

impl JointCovariance {
    pub fn n_steps(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        2 * self.n
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    /// `E[W^H_{t_{i+1}} W^H_{t_{j+1}}]`.
    pub fn ww(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * 2 * self.n + j]
    }

    /// `E[W^H_{t_{i+1}} B_{t_{j+1}}]`.
    pub fn wb(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * 2 * self.n + self.n + j]
    }

    /// `E[B_{t_{i+1}} B_{t_{j+1}}]`.
    pub fn bb(&self, i: usize, j: usize) -> f64 {
        self.matrix[(self.n + i) * 2 * self.n + self.n + j]
    }

    pub fn jitter(&self) -> f64 {
        self.factor.jitter()
    }

    pub fn factor(&self) -> &Cholesky {
        &self.factor
    }
}

/// Joint law of the `W` increments and `W^H` on the grid, factorized as
/// `W^H = C z_1 + L_r z_2` with `Delta W = sqrt(dt) z_1`.
#[derive(Debug, Clone)]
pub struct WDrivenFactor {
    n: usize,
    dt: f64,
    /// `n x n`, row `i` holds `Cov(W^H_{t_{i+1}}, Delta W_j) / sqrt(dt)`.
    mixing: Vec<f64>,
    residual: Cholesky,
}

impl WDrivenFactor {
    pub fn build(grid: &TimeGrid, hurst: f64) -> Result<Self> {
        ensure(hurst > 0.0 && hurst < 1.0, "hurst", hurst)?;
        Self::build_with(grid, &FbmTable::new(hurst, grid.n_steps()))
    }

    pub fn build_with(grid: &TimeGrid, table: &FbmTable) -> Result<Self> {
        let hurst = table.hurst();
        let n = grid.n_steps();
        let dt = grid.dt();
        let q = hurst + 0.5;
        let scale = libm::sqrt(2.0 * hurst) / q / libm::sqrt(dt);
        let mut mixing = vec![0.0; n * n];
        for i in 0..n {
            let ti = grid.time(i + 1);
            for j in 0..=i {
                let (a, b) = (grid.time(j), grid.time(j + 1));
                mixing[i * n + j] = scale * (libm::pow(ti - a, q) - libm::pow((ti - b).max(0.0), q));
            }
        }
        let ww = table.grid_matrix(grid);
        let mut resid = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let c = ww[i * n + j]
                    - crate::linalg::dot(&mixing[i * n..i * n + j + 1], &mixing[j * n..j * n + j + 1]);
                resid[i * n + j] = c;
                resid[j * n + i] = c;
            }
        }
        let tol = 1e-13 * libm::pow(grid.maturity(), 2.0 * hurst);
        let residual = Cholesky::factor_semidefinite(&resid, n, tol)?;
        Ok(Self { n, dt, mixing, residual })
    }

    pub fn n_steps(&self) -> usize {
        self.n
    }

    pub fn mixing(&self) -> &[f64] {
        &self.mixing
    }

    pub fn residual(&self) -> &Cholesky {
        &self.residual
    }
}

/// Which sampler produced (or should produce) a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backend {
    Covariance,
    WDriven,
}

/// How `int_0^T sigma_t^2 dt` is discretized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceRule {
    /// `sum sigma_{t_i}^2 dt` over left endpoints, consistent with the price scheme.
    #[default]
    LeftRiemann,
    Trapezoid,
}

/// Simulated trajectories, stored as per-path summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    pub backend: Backend,
    pub seed: u64,
    pub batch_index: u64,
    pub maturity: f64,
    /// `int_0^T sigma^2 dt` per path.
    pub integrated_variance: Vec<f64>,
    /// `sqrt(integrated_variance / T)`.
    pub realized_vol: Vec<f64>,
    pub terminal_spot: Vec<f64>,
    /// `W^H_T`.
    pub wh_terminal: Vec<f64>,
    /// Terminal value of the (correlated) price driver `B_T`.
    pub driver_terminal: Vec<f64>,
    /// `sum sigma_{t_i} Delta W_i`; W-driven backend only.
    pub w_integral: Option<Vec<f64>>,
    /// Row-major `len x (n+1)` variance paths `sigma^2_{t_0..t_n}`, when retained.
    pub variance_paths: Option<Vec<f64>>,
    /// Paths `2j` and `2j+1` are driven by opposite normals.
    pub antithetic: bool,
}

impl PathBatch {
    pub fn len(&self) -> usize {
        self.terminal_spot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terminal_spot.is_empty()
    }

    /// Index ranges of independent samples: antithetic pairs, or single
    /// paths. A trailing unpaired path forms its own group.
    pub fn groups(&self) -> impl Iterator<Item = core::ops::Range<usize>> + '_ {
        let step = if self.antithetic { 2 } else { 1 };
        let n = self.len();
        (0..n.div_ceil(step)).map(move |g| g * step..((g + 1) * step).min(n))
    }

    pub fn summary(&self) -> BatchSummary {
        let n = self.len().max(1) as f64;
        BatchSummary {
            batch: self.batch_index,
            n: self.len() as u64,
            mean_terminal_spot: self.terminal_spot.iter().sum::<f64>() / n,
            mean_realized_vol: self.realized_vol.iter().sum::<f64>() / n,
        }
    }

    /// Appends another batch's paths (used to flatten a batch stream).
    pub fn extend(&mut self, other: PathBatch) {
        self.integrated_variance.extend(other.integrated_variance);
        self.realized_vol.extend(other.realized_vol);
        self.terminal_spot.extend(other.terminal_spot);
        self.wh_terminal.extend(other.wh_terminal);
        self.driver_terminal.extend(other.driver_terminal);
        match (&mut self.w_integral, other.w_integral) {
            (Some(a), Some(b)) => a.extend(b),
            (slot, _) => *slot = None,
        }
        match (&mut self.variance_paths, other.variance_paths) {
            (Some(a), Some(b)) => a.extend(b),
            (slot, _) => *slot = None,
        }
    }
}

/// Per-batch means, exported for debugging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchSummary {
    pub batch: u64,
    pub n: u64,
    pub mean_terminal_spot: f64,
    pub mean_realized_vol: f64,
}

#[derive(Debug, Clone)]
enum Engine {
    Covariance(JointCovariance),
    WDriven(WDrivenFactor),
}

/// A configured sampler: model, grid and the factorized Gaussian law.
#[derive(Debug, Clone)]
pub struct Sampler {
    params: RBergomiParams,
    grid: TimeGrid,
    engine: Engine,
    variance_rule: VarianceRule,
    retain_paths: bool,
    antithetic: bool,
    /// `alpha^2 t_i^{2H} / 2` for `i = 0..=n`.
    compensator: Vec<f64>,
}

impl Sampler {
    pub fn new(params: RBergomiParams, grid: TimeGrid, backend: Backend) -> Result<Self> {
        params.validate()?;
        let engine = match backend {
            Backend::Covariance => Engine::Covariance(build_joint_covariance(&grid, &params)?),
            Backend::WDriven => Engine::WDriven(WDrivenFactor::build(&grid, params.hurst)?),
        };
        Ok(Self::from_parts(params, grid, engine))
    }

    /// [`Sampler::new`] reusing a fractional covariance table that covers the grid.
    pub fn with_table(params: RBergomiParams, grid: TimeGrid, backend: Backend, table: &FbmTable) -> Result<Self> {
        params.validate()?;
        ensure(table.hurst() == params.hurst, "hurst", params.hurst)?;
        ensure(table.len() >= grid.n_steps(), "n_steps", grid.n_steps() as f64)?;
        let engine = match backend {
            Backend::Covariance => Engine::Covariance(build_joint_covariance_with(&grid, &params, table)?),
            Backend::WDriven => Engine::WDriven(WDrivenFactor::build_with(&grid, table)?),
        };
        Ok(Self::from_parts(params, grid, engine))
    }

    pub fn from_covariance(params: RBergomiParams, grid: TimeGrid, cov: JointCovariance) -> Self {
        Self::from_parts(params, grid, Engine::Covariance(cov))
    }

    pub fn from_wdriven(params: RBergomiParams, grid: TimeGrid, factor: WDrivenFactor) -> Self {
        Self::from_parts(params, grid, Engine::WDriven(factor))
    }

    fn from_parts(params: RBergomiParams, grid: TimeGrid, engine: Engine) -> Self {
        let a2 = params.alpha * params.alpha;
        let compensator = (0..=grid.n_steps())
            .map(|i| 0.5 * a2 * libm::pow(grid.time(i), 2.0 * params.hurst))
            .collect();
        Self { params, grid, engine, variance_rule: VarianceRule::default(), retain_paths: false, antithetic: false, compensator }
    }

    pub fn with_variance_rule(mut self, rule: VarianceRule) -> Self {
        self.variance_rule = rule;
        self
    }

    /// Drive consecutive path pairs by opposite normals. Estimators then
    /// average each pair before accumulating.
    pub fn with_antithetic(mut self, yes: bool) -> Self {
        self.antithetic = yes;
        self
    }

    pub fn antithetic(&self) -> bool {
        self.antithetic
    }

    /// Keep full variance paths in every batch (memory heavy).
    pub fn retain_variance_paths(mut self, yes: bool) -> Self {
        self.retain_paths = yes;
        self
    }

    pub fn params(&self) -> &RBergomiParams {
        &self.params
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn backend(&self) -> Backend {
        match self.engine {
            Engine::Covariance(_) => Backend::Covariance,
            Engine::WDriven(_) => Backend::WDriven,
        }
    }

    /// Draws batch `batch_index` of the stream identified by `seed`.
    ///
    /// The normals come from ChaCha8 keyed by `seed` on stream
    /// `batch_index`, so a batch's content does not depend on which thread
    /// produces it or on the other batches.
    pub fn sample_batch(&self, seed: u64, batch_index: u64, n_paths: usize) -> PathBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(batch_index);
        let n = self.grid.n_steps();
        let with_w = matches!(self.engine, Engine::WDriven(_));
        let mut out = PathBatch {
            backend: self.backend(),
            seed,
            batch_index,
            maturity: self.grid.maturity(),
            integrated_variance: Vec::with_capacity(n_paths),
            realized_vol: Vec::with_capacity(n_paths),
            terminal_spot: Vec::with_capacity(n_paths),
            wh_terminal: Vec::with_capacity(n_paths),
            driver_terminal: Vec::with_capacity(n_paths),
            w_integral: with_w.then(|| Vec::with_capacity(n_paths)),
            variance_paths: self.retain_paths.then(|| Vec::with_capacity(n_paths * (n + 1))),
            antithetic: self.antithetic,
        };
        let mut scratch = Scratch::default();
        let mut done = 0;
        while done < n_paths {
            let chunk = CHUNK.min(n_paths - done);
            match &self.engine {
                Engine::Covariance(cov) => self.chunk_covariance(cov, &mut rng, chunk, &mut scratch, &mut out),
                Engine::WDriven(f) => self.chunk_wdriven(f, &mut rng, chunk, &mut scratch, &mut out),
            }
            done += chunk;
        }
        out
    }

    fn chunk_covariance(
        &self,
        cov: &JointCovariance,
        rng: &mut ChaCha8Rng,
        chunk: usize,
        s: &mut Scratch,
        out: &mut PathBatch,
    ) {
        let n = self.grid.n_steps();
        let m = 2 * n;
        fill_normals(rng, &mut s.z, chunk, m, self.antithetic);
        s.y.resize(chunk * m, 0.0);
        cov.factor.apply_batch(&s.z, &mut s.y, chunk);
        for p in 0..chunk {
            let y = &s.y[p * m..(p + 1) * m];
            let (wh, b) = y.split_at(n);
            self.finish_path(wh, PriceDriver::Correlated(b), out, &mut s.var);
        }
    }

    fn chunk_wdriven(&self, f: &WDrivenFactor, rng: &mut ChaCha8Rng, chunk: usize, s: &mut Scratch, out: &mut PathBatch) {
        let n = self.grid.n_steps();
        let m = 2 * n;
        fill_normals(rng, &mut s.z, chunk, m, self.antithetic);
        fill_normals(rng, &mut s.zb, chunk, n, self.antithetic);
        s.y.resize(chunk * n, 0.0);
        lower_times_batch(&f.mixing, n, n, &s.z, m, &mut s.y, n, chunk, false);
        lower_times_batch(f.residual.lower(), n, n, &s.z[n..], m, &mut s.y, n, chunk, true);
        let sqrt_dt = libm::sqrt(f.dt);
        for p in 0..chunk {
            let wh = &s.y[p * n..(p + 1) * n];
            let zw = &s.z[p * m..p * m + n];
            let zb = &s.zb[p * n..(p + 1) * n];
            self.finish_path(wh, PriceDriver::Independent { zw, zb, sqrt_dt }, out, &mut s.var);
        }
    }

    /// Builds the variance path from `W^H_{t_1..n}` and evolves the log-price.
    fn finish_path(&self, wh: &[f64], driver: PriceDriver<'_>, out: &mut PathBatch, var: &mut Vec<f64>) {
        let n = self.grid.n_steps();
        let dt = self.grid.dt();
        let p = &self.params;
        let v0 = p.sigma0 * p.sigma0;
        var.clear();
        var.push(v0);
        for i in 1..=n {
            var.push(v0 * libm::exp(p.alpha * wh[i - 1] - self.compensator[i]));
        }
        let integrated = match self.variance_rule {
            VarianceRule::LeftRiemann => var[..n].iter().sum::<f64>() * dt,
            VarianceRule::Trapezoid => (var[..n].iter().sum::<f64>() - 0.5 * var[0] + 0.5 * var[n]) * dt,
        };
        let mut x = p.log_spot();
        let mut drift = 0.0;
        let terminal_driver = match driver {
            PriceDriver::Correlated(b) => {
                let mut prev = 0.0;
                for i in 0..n {
                    let vol = libm::sqrt(var[i]);
                    x += vol * (b[i] - prev);
                    drift += var[i];
                    prev = b[i];
                }
                prev
            }
            PriceDriver::Independent { zw, zb, sqrt_dt } => {
                let rho = p.rho;
                let rho_bar = libm::sqrt((1.0 - rho * rho).max(0.0));
                let mut w_int = 0.0;
                let mut driver = 0.0;
                for i in 0..n {
                    let vol = libm::sqrt(var[i]);
                    let dw = sqrt_dt * zw[i];
                    let db = rho * dw + rho_bar * sqrt_dt * zb[i];
                    w_int += vol * dw;
                    x += vol * db;
                    drift += var[i];
                    driver += db;
                }
                if let Some(w) = out.w_integral.as_mut() {
                    w.push(w_int);
                }
                driver
            }
        };
        x -= 0.5 * drift * dt;
        out.integrated_variance.push(integrated);
        out.realized_vol.push(libm::sqrt(integrated / self.grid.maturity()));
        out.terminal_spot.push(libm::exp(x));
        out.wh_terminal.push(wh[n - 1]);
        out.driver_terminal.push(terminal_driver);
        if let Some(paths) = out.variance_paths.as_mut() {
            paths.extend_from_slice(var);
        }
    }

    /// Runs `n_paths` paths split into batches of `batch_size` (rounded up to
    /// an even size for antithetic sampling), applying
    /// `reduce` to each batch; results come back in batch order.
    pub fn run<E, T, F>(&self, exec: &E, seed: u64, n_paths: usize, batch_size: usize, reduce: F) -> Vec<T>
    where
        E: BatchExecutor + ?Sized,
        T: Send,
        F: Fn(&PathBatch) -> T + Sync + Send,
    {
        let mut batch_size = batch_size.max(1);
        if self.antithetic && batch_size % 2 == 1 {
            batch_size += 1;
        }
        let n_batches = n_paths.div_ceil(batch_size);
        exec.map_batches(n_batches, |b| {
            let len = batch_size.min(n_paths - b * batch_size);
            let batch = self.sample_batch(seed, b as u64, len);
            reduce(&batch)
        })
    }
}

enum PriceDriver<'a> {
    /// Correlated driver values `B_{t_1..n}`.
    Correlated(&'a [f64]),
    /// Standard normals for `W` and the independent Brownian motion.
    Independent { zw: &'a [f64], zb: &'a [f64], sqrt_dt: f64 },
}

#[derive(Default)]
struct Scratch {
    z: Vec<f64>,
    zb: Vec<f64>,
    y: Vec<f64>,
    var: Vec<f64>,
}

/// Standard normals for `paths` vectors of length `width`; with
/// `antithetic`, every odd vector is the negation of the one before it.
fn fill_normals(rng: &mut ChaCha8Rng, buf: &mut Vec<f64>, paths: usize, width: usize, antithetic: bool) {
    buf.clear();
    if !antithetic {
        buf.extend((0..paths * width).map(|_| -> f64 { StandardNormal.sample(rng) }));
        return;
    }
    for p in 0..paths {
        if p % 2 == 0 {
            buf.extend((0..width).map(|_| -> f64 { StandardNormal.sample(rng) }));
        } else {
            let start = buf.len() - width;
            for i in 0..width {
                buf.push(-buf[start + i]);
            }
        }
    }
}

/// Draws `n_paths` paths from a covariance-backed sampler in one batch stream.
pub fn sample_paths(cov: &JointCovariance, params: &RBergomiParams, grid: &TimeGrid, n_paths: usize, seed: u64) -> PathBatch {
    let sampler = Sampler::from_covariance(*params, *grid, cov.clone());
    collect(&sampler, n_paths, seed)
}

/// Draws `n_paths` paths from the W-driven sampler in one batch stream.
pub fn sample_paths_wdriven(params: &RBergomiParams, grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<PathBatch> {
    let sampler = Sampler::new(*params, *grid, Backend::WDriven)?;
    Ok(collect(&sampler, n_paths, seed))
}

fn collect(sampler: &Sampler, n_paths: usize, seed: u64) -> PathBatch {
    let batches = sampler.run(&crate::exec::Sequential, seed, n_paths, DEFAULT_BATCH_SIZE, |b| b.clone());
    let mut it = batches.into_iter();
    let mut first = it.next().unwrap_or_else(|| sampler.sample_batch(seed, 0, 0));
    for b in it {
        first.extend(b);
    }
    first
}

/// Mixes a run seed with cell coordinates into an independent stream key.
pub fn cell_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut h = splitmix(seed ^ 0x5DEE_CE66_D1CE_4E5B);
    for &p in parts {
        h = splitmix(h ^ p);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
