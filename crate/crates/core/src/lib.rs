//! Numerical core for studying the skew of rough-volatility smiles.
//!
//! The crate covers Black-Scholes pricing and inversion, monotone smile
//! interpolation, zero-vanna strike solving, exact-in-law simulation of the
//! rough Bergomi model, Monte Carlo vanilla pricing (plain and conditional)
//! and the skew/covariance/Hurst estimators built on top of them.
//!
//! The crate is `no_std` with `alloc`. All transcendental functions go
//! through `libm`, so results are bit-for-bit reproducible across platforms.
//! The `std` feature only enables runtime CPU feature detection in the
//! matrix kernels.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod analytics;
pub mod blackscholes;
pub mod error;
pub mod estimate;
pub mod exec;
pub mod linalg;
pub mod normal;
pub mod pricer;
pub mod quadrature;
pub mod rbergomi;
pub mod smile;
pub mod strikes;

pub use blackscholes::BsPoint;
pub use error::{Error, Result};
pub use estimate::Estimate;
pub use exec::{BatchExecutor, Sequential};

pub use rbergomi::{Backend, PathBatch, RBergomiParams, TimeGrid};

pub use analytics::{HurstEstimate, SkewReport};
pub use pricer::{PriceGrid, PricingConfig, PricingMode};
pub use smile::{SmileInterpolant, SmileSlice};
pub use strikes::ZeroVannaPair;
