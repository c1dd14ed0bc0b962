//! Randomized missing data (RMD) filtering, estimation and forecasting for
//! scalar state-space models.
//!
//! Observations are randomly treated as missing so that contaminated
//! measurements are downweighted. Two estimators are provided:
//!
//! * [`rmdx`]: exogenous randomization. Fixed-size inclusion paths are drawn
//!   up front, the model is fit on each path by maximum likelihood, and
//!   parameters, filtered states and forecasts are averaged across paths.
//! * [`rmdn`]: endogenous randomization. Inclusion indicators are part of
//!   the posterior; a Rao-Blackwellized particle system tracks parameters,
//!   Gaussian-mixture state beliefs and inclusion ancestry.
//!
//! [`eval`] runs recursive out-of-sample comparisons (MSFE, weighted
//! likelihood ratio tests, per-origin selection of the inclusion rate).

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod models;
pub mod optim;
pub mod rmdn;
pub mod rmdx;
pub mod rng;
pub mod statespace;

pub use error::{Result, RmdError};
pub use models::{FamilyTag, ModelFamily};
pub use statespace::{GaussianBelief, InclusionPath, LinearGaussianModel, TimeSeries};
