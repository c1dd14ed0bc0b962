//! Exact scalar linear-Gaussian filtering, forecasting and maximum likelihood
//! with arbitrary missing-observation patterns.

pub mod forecast;
pub mod kalman;
pub mod mle;
pub mod series;

pub use forecast::{average_moments, forecast, AverageCoefficients, Forecast, ForecastMixture, Predictive};
pub use kalman::{filter_series, kalman_step, FilterOutput, GaussianBelief, LinearGaussianModel};
pub use mle::{mle_fit, MleFit, MleOptions};
pub use series::{InclusionPath, Quarter, TimeSeries};
