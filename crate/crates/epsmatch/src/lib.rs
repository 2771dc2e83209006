//! Random two-sided matching markets with switching costs.
//!
//! The lab generates markets from the uniform-matrix model, decides
//! eps-stability through multiplicative entry thresholds, counts stable
//! matchings exactly by pruned backtracking, estimates the expected count
//! by three independent Monte Carlo routes, and provides the
//! uniform-spacings machinery (max-spacing CDF, sum-of-uniforms density,
//! envelope bounds on F(z) = (1 - e^-z)/z) that the estimates are checked
//! against. Everything stochastic is driven by counter-based seeds, so
//! results are bit-reproducible for any thread count.

pub mod enumeration;
pub mod error;
pub mod estimators;
pub mod market;
mod numerics;
pub mod rng;
pub mod selftest;
pub mod spacings;
pub mod stability;
pub mod sweep;

pub use error::{Error, Result};
pub use market::{EpsParams, Market, Matching, Side};
pub use rng::Seed;
