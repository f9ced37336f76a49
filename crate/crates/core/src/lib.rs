//! Simulation and estimation toolkit for sentiment-feedback dynamics in asset
//! returns.
//!
//! The structural side generates return paths from a geometric feedback
//! loop, a short-sale-cap equilibrium, a two-population clearing model and
//! volatility-dependent coefficients. The estimation side recovers those
//! objects with local projections, HAC inference, geometric response fits,
//! resampling and multiple-testing corrections, fixed-effects panels and
//! portfolio sorts.

pub mod econometrics;
pub mod inference;
pub mod month;
pub mod panel;
pub mod portfolio;
pub mod rng;
pub mod series;
pub mod stats;
pub mod structural;

pub use month::Month;
pub use series::{MonthlySeries, ShockSeries};
