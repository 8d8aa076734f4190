//! Declarative experiment configuration, read from TOML.
//!
//! Every section except `[model]` and `[grid]` may be omitted, in which case
//! the defaults below apply. [`ExperimentConfig::default`] is the full study
//! grid at 200,000 paths per cell with conditional pricing.

use std::path::{Path, PathBuf};

use roughskew_core::pricer::DEFAULT_PATHS;
use roughskew_core::rbergomi::{VarianceRule, DEFAULT_BATCH_SIZE};
use roughskew_core::smile::{DEFAULT_STRIKE_COUNT, DEFAULT_STRIKE_WIDTH};
use roughskew_core::{analytics::CovarianceKind, Backend, PricingConfig, PricingMode, RBergomiParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AppError, AppResult};

pub const MIN_PATHS: usize = 1000;

pub const STUDY_HURST: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
pub const STUDY_RHO: [f64; 4] = [-0.2, -0.4, -0.6, -0.8];
pub const STUDY_MATURITIES: [f64; 11] = [0.0025, 0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 3.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub figures: FigureConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub s0: f64,
    pub sigma0: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub hurst: Vec<f64>,
    pub rho: Vec<f64>,
    pub maturities: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendChoice {
    Covariance,
    Wdriven,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PricingChoice {
    Plain,
    Conditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceChoice {
    Left,
    Trapezoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceChoice {
    Raw,
    Centered,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub backend: BackendChoice,
    pub pricing: PricingChoice,
    pub antithetic: bool,
    pub batch_size: usize,
    pub n_strikes: usize,
    pub strike_width: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
    pub variance_rule: VarianceChoice,
    pub covariance: CovarianceChoice,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_paths: DEFAULT_PATHS,
            seed: 1,
            backend: BackendChoice::Wdriven,
            pricing: PricingChoice::Conditional,
            antithetic: true,
            batch_size: DEFAULT_BATCH_SIZE,
            n_strikes: DEFAULT_STRIKE_COUNT,
            strike_width: DEFAULT_STRIKE_WIDTH,
            n_steps: None,
            variance_rule: VarianceChoice::Left,
            covariance: CovarianceChoice::Raw,
        }
    }
}

/// Which cells feed the four figure files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FigureConfig {
    /// Correlation of the figures that vary `H`.
    pub rho: f64,
    /// Hurst indices of the figures that vary `H`.
    pub hurst: Vec<f64>,
    /// Hurst index of the figures that vary `rho`.
    pub fixed_hurst: f64,
    /// Correlations of the figures that vary `rho`.
    pub rhos: Vec<f64>,
    /// Short maturity of the Hurst estimator.
    pub t1: f64,
}

impl Default for FigureConfig {
    fn default() -> Self {
        Self { rho: -0.8, hurst: vec![0.1, 0.3, 0.5], fixed_hurst: 0.3, rhos: vec![-0.8, -0.6, -0.4], t1: 0.0025 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Worker threads; 0 defers to the environment.
    pub threads: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), threads: 0 }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig { s0: 100.0, sigma0: 0.2, alpha: 0.8 },
            grid: GridConfig {
                hurst: STUDY_HURST.to_vec(),
                rho: STUDY_RHO.to_vec(),
                maturities: STUDY_MATURITIES.to_vec(),
            },
            simulation: SimulationConfig::default(),
            figures: FigureConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

fn check(cond: bool, field: &str, message: impl FnOnce() -> String) -> AppResult<()> {
    if cond {
        Ok(())
    } else {
        Err(AppError::config(field, message()))
    }
}

fn check_list(values: &[f64], field: &str, ok: impl Fn(f64) -> bool, domain: &str) -> AppResult<()> {
    check(!values.is_empty(), field, || "must not be empty".into())?;
    for &v in values {
        check(ok(v), field, || format!("{v} outside {domain}"))?;
    }
    Ok(())
}

fn is_hurst(h: f64) -> bool {
    h > 0.0 && h < 1.0
}

fn is_rho(r: f64) -> bool {
    (-1.0..=1.0).contains(&r)
}

fn is_maturity(t: f64) -> bool {
    t > 0.0 && t.is_finite()
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> AppResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            // serde reports the offending key inside backticks
            let field = msg.split('`').nth(1).unwrap_or("config").to_string();
            AppError::config(field, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> AppResult<()> {
        let m = &self.model;
        check(m.s0 > 0.0 && m.s0.is_finite(), "s0", || format!("{} must be positive", m.s0))?;
        check(m.sigma0 > 0.0 && m.sigma0.is_finite(), "sigma0", || format!("{} must be positive", m.sigma0))?;
        check(m.alpha >= 0.0 && m.alpha.is_finite(), "alpha", || format!("{} must be non-negative", m.alpha))?;

        check_list(&self.grid.hurst, "hurst", is_hurst, "(0, 1)")?;
        check_list(&self.grid.rho, "rho", is_rho, "[-1, 1]")?;
        check_list(&self.grid.maturities, "maturities", is_maturity, "(0, inf)")?;

        let s = &self.simulation;
        check(s.n_paths >= MIN_PATHS, "n_paths", || format!("{} is below the minimum {MIN_PATHS}", s.n_paths))?;
        check(s.batch_size >= 1, "batch_size", || "must be at least 1".into())?;
        check(s.n_strikes >= 4, "n_strikes", || format!("{} is below the minimum 4", s.n_strikes))?;
        check(s.strike_width > 0.0 && s.strike_width.is_finite(), "strike_width", || {
            format!("{} must be positive", s.strike_width)
        })?;
        if let Some(n) = s.n_steps {
            check(n >= 1, "n_steps", || "must be at least 1".into())?;
        }
        check(s.pricing == PricingChoice::Plain || s.backend == BackendChoice::Wdriven, "backend", || {
            "conditional pricing needs the wdriven backend".into()
        })?;

        let f = &self.figures;
        check(is_rho(f.rho), "figures.rho", || format!("{} outside [-1, 1]", f.rho))?;
        check_list(&f.hurst, "figures.hurst", is_hurst, "(0, 1)")?;
        check(is_hurst(f.fixed_hurst), "figures.fixed_hurst", || format!("{} outside (0, 1)", f.fixed_hurst))?;
        check_list(&f.rhos, "figures.rhos", is_rho, "[-1, 1]")?;
        check(is_maturity(f.t1), "figures.t1", || format!("{} must be positive", f.t1))?;
        Ok(())
    }

    /// Applies command-line overrides.
    pub fn with_overrides(mut self, seed: Option<u64>, paths: Option<usize>, out: Option<PathBuf>) -> AppResult<Self> {
        if let Some(seed) = seed {
            self.simulation.seed = seed;
        }
        if let Some(n) = paths {
            self.simulation.n_paths = n;
        }
        if let Some(dir) = out {
            self.output.dir = dir;
        }
        self.validate()?;
        Ok(self)
    }

    /// Short SHA-256 of everything that affects results; the output
    /// directory and thread count are excluded.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = OutputConfig::default();
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn params(&self, hurst: f64, rho: f64) -> AppResult<RBergomiParams> {
        let m = &self.model;
        Ok(RBergomiParams::new(m.s0, m.sigma0, m.alpha, hurst, rho)?)
    }

    pub fn pricing(&self) -> PricingConfig {
        let s = &self.simulation;
        PricingConfig {
            n_paths: s.n_paths,
            batch_size: s.batch_size,
            seed: s.seed,
            backend: match s.backend {
                BackendChoice::Covariance => Backend::Covariance,
                BackendChoice::Wdriven => Backend::WDriven,
            },
            mode: match s.pricing {
                PricingChoice::Plain => PricingMode::Plain,
                PricingChoice::Conditional => PricingMode::Conditional,
            },
            n_strikes: s.n_strikes,
            strike_width: s.strike_width,
            n_steps: s.n_steps,
            variance_rule: match s.variance_rule {
                VarianceChoice::Left => VarianceRule::LeftRiemann,
                VarianceChoice::Trapezoid => VarianceRule::Trapezoid,
            },
            antithetic: s.antithetic,
        }
    }

    pub fn covariance_kind(&self) -> CovarianceKind {
        match self.simulation.covariance {
            CovarianceChoice::Raw => CovarianceKind::Raw,
            CovarianceChoice::Centered => CovarianceKind::Centered,
        }
    }
}
