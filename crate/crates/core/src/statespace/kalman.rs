use serde::{Deserialize, Serialize};

use super::series::{InclusionPath, TimeSeries};
use crate::error::{invalid, Result, RmdError};

/// Floor applied to predictive variances so fully degenerate updates stay finite.
pub const VARIANCE_FLOOR: f64 = 1e-10;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Scalar linear-Gaussian state-space model.
///
/// ```text
/// x_t = state_const + state_coef * x_{t-1} + state_sd * e_t
/// y_t = x_t + obs_sd * u_t
/// x_0 ~ N(init_mean, init_var)
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianModel {
    pub state_const: f64,
    pub state_coef: f64,
    pub state_sd: f64,
    pub obs_sd: f64,
    pub init_mean: f64,
    pub init_var: f64,
}

impl LinearGaussianModel {
    /// Local-level (random walk plus noise) model.
    pub fn local_level(state_sd: f64, obs_sd: f64) -> Self {
        Self {
            state_const: 0.0,
            state_coef: 1.0,
            state_sd,
            obs_sd,
            init_mean: 0.0,
            init_var: 100.0,
        }
    }

    pub fn with_init(mut self, init_mean: f64, init_var: f64) -> Self {
        self.init_mean = init_mean;
        self.init_var = init_var;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.state_const,
            self.state_coef,
            self.state_sd,
            self.obs_sd,
            self.init_mean,
            self.init_var,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return invalid("model parameters must be finite");
        }
        if self.state_sd < 0.0 || self.obs_sd < 0.0 || self.init_var < 0.0 {
            return invalid("standard deviations and initial variance must be nonnegative");
        }
        Ok(())
    }

    pub fn initial_belief(&self) -> GaussianBelief {
        GaussianBelief {
            mean: self.init_mean,
            var: self.init_var,
        }
    }

    /// Time-advance a belief by one step.
    #[inline]
    pub fn predict(&self, b: GaussianBelief) -> GaussianBelief {
        GaussianBelief {
            mean: self.state_const + self.state_coef * b.mean,
            var: self.state_coef * self.state_coef * b.var + self.state_sd * self.state_sd,
        }
    }
}

/// Gaussian distribution of the scalar state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBelief {
    pub mean: f64,
    pub var: f64,
}

impl GaussianBelief {
    pub fn new(mean: f64, var: f64) -> Result<Self> {
        let b = Self { mean, var };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mean.is_finite() || !self.var.is_finite() {
            return invalid("belief must be finite");
        }
        if self.var < 0.0 {
            return invalid("belief variance must be nonnegative");
        }
        Ok(())
    }
}

/// Log density of N(mean, var) at `x`.
#[inline]
pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Measurement update of an already time-advanced belief with observation
/// variance `obs_var`. Returns the posterior and the log predictive density.
#[inline]
pub(crate) fn update_predicted(pred: GaussianBelief, y: f64, obs_var: f64) -> (GaussianBelief, f64) {
    let s = (pred.var + obs_var).max(VARIANCE_FLOOR);
    let gain = pred.var / s;
    let resid = y - pred.mean;
    let post = GaussianBelief {
        mean: pred.mean + gain * resid,
        var: (pred.var * (1.0 - gain)).max(0.0),
    };
    (post, -0.5 * (LN_2PI + s.ln() + resid * resid / s))
}

/// One predict (and optionally update) step.
///
/// Returns the posterior belief and the log predictive density of `obs`
/// (zero when `obs` is absent).
pub fn kalman_step(
    belief: GaussianBelief,
    model: &LinearGaussianModel,
    obs: Option<f64>,
) -> Result<(GaussianBelief, f64)> {
    belief.validate()?;
    let pred = model.predict(belief);
    match obs {
        None => Ok((pred, 0.0)),
        Some(y) => {
            if !y.is_finite() {
                return invalid("observation must be finite");
            }
            let obs_var = model.obs_sd * model.obs_sd;
            if obs_var == 0.0 && pred.var == 0.0 {
                return Err(RmdError::DegenerateModel(
                    "zero observation noise and zero state variance".into(),
                ));
            }
            Ok(update_predicted(pred, y, obs_var))
        }
    }
}

/// Filtered beliefs at every time plus the log-likelihood of included observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutput {
    pub filtered: Vec<GaussianBelief>,
    pub loglik: f64,
}

impl FilterOutput {
    pub fn last(&self) -> GaussianBelief {
        *self.filtered.last().expect("filter output is never empty")
    }

    pub fn means(&self) -> Vec<f64> {
        self.filtered.iter().map(|b| b.mean).collect()
    }
}

/// Run the filter over `series`, skipping the measurement update wherever the
/// path is false.
pub fn filter_series(
    model: &LinearGaussianModel,
    series: &TimeSeries,
    path: &InclusionPath,
) -> Result<FilterOutput> {
    if series.len() != path.len() {
        return invalid(format!(
            "inclusion path length {} does not match series length {}",
            path.len(),
            series.len()
        ));
    }
    model.validate()?;
    filter_values(model, series.values(), path)
}

/// Hot-path variant of [`filter_series`] over raw values; assumes the model is valid.
pub(crate) fn filter_values(
    model: &LinearGaussianModel,
    values: &[f64],
    path: &InclusionPath,
) -> Result<FilterOutput> {
    let mut belief = model.initial_belief();
    let mut filtered = Vec::with_capacity(values.len());
    let mut loglik = 0.0;
    for (t, (&y, inc)) in values.iter().zip(path.iter()).enumerate() {
        let (b, ll) = kalman_step(belief, model, inc.then_some(y)).map_err(|e| match e {
            RmdError::DegenerateModel(m) => RmdError::DegenerateModel(format!("{m} at t={t}")),
            other => other,
        })?;
        belief = b;
        loglik += ll;
        filtered.push(b);
    }
    Ok(FilterOutput { filtered, loglik })
}

/// Log-likelihood only; avoids allocating the belief sequence.
pub(crate) fn loglik_values(model: &LinearGaussianModel, values: &[f64], path: &InclusionPath) -> f64 {
    let obs_var = model.obs_sd * model.obs_sd;
    let mut belief = model.initial_belief();
    let mut loglik = 0.0;
    for (&y, inc) in values.iter().zip(path.iter()) {
        let pred = model.predict(belief);
        if inc {
            let (post, ll) = update_predicted(pred, y, obs_var);
            belief = post;
            loglik += ll;
        } else {
            belief = pred;
        }
    }
    loglik
}
