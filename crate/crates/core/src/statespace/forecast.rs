use serde::{Deserialize, Serialize};

use super::kalman::{GaussianBelief, LinearGaussianModel, LN_2PI};
use crate::error::{invalid, Result};

/// Gaussian predictive moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Predictive {
    pub mean: f64,
    pub var: f64,
}

/// Forecasts from a filtered belief at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    /// Predictive for y_{t+1}, ..., y_{t+h}.
    pub steps: Vec<Predictive>,
    /// Predictive for (1/h) * sum_{j=1..h} y_{t+j}.
    pub average: Predictive,
}

/// Exact Gaussian forecasts up to `h` steps ahead.
pub fn forecast(model: &LinearGaussianModel, belief: GaussianBelief, h: usize) -> Result<Forecast> {
    if h == 0 {
        return invalid("forecast horizon must be at least 1");
    }
    belief.validate()?;
    let obs_var = model.obs_sd * model.obs_sd;
    let mut steps = Vec::with_capacity(h);
    let mut b = belief;
    for _ in 0..h {
        b = model.predict(b);
        steps.push(Predictive {
            mean: b.mean,
            var: b.var + obs_var,
        });
    }
    let average = average_moments(model, belief, h);
    Ok(Forecast { steps, average })
}

/// Moments of the h-step average of future observations.
///
/// With x_{t+j} = const_j + a^j x_t + sum_{i<=j} a^{j-i} e_{t+i}, the sum over
/// j loads x_t with sum_j a^j and each shock e_{t+i} with
/// sum_{k=0}^{h-i} a^k.
pub fn average_moments(model: &LinearGaussianModel, belief: GaussianBelief, h: usize) -> Predictive {
    let a = model.state_coef;
    let q = model.state_sd * model.state_sd;
    let r = model.obs_sd * model.obs_sd;

    // partial[k] = sum_{m=0}^{k-1} a^m
    let mut partial = Vec::with_capacity(h + 1);
    let mut acc = 0.0;
    let mut pow = 1.0;
    partial.push(0.0);
    for _ in 0..h {
        acc += pow;
        pow *= a;
        partial.push(acc);
    }
    // sum_{j=1..h} a^j = a * partial[h]
    let state_load = a * partial[h];
    let mut shock_var = 0.0;
    for i in 1..=h {
        let w = partial[h - i + 1];
        shock_var += w * w;
    }
    let mut mean_sum = 0.0;
    let mut m = belief.mean;
    for _ in 0..h {
        m = model.state_const + a * m;
        mean_sum += m;
    }
    let hf = h as f64;
    Predictive {
        mean: mean_sum / hf,
        var: (state_load * state_load * belief.var + q * shock_var + hf * r) / (hf * hf),
    }
}

/// Affine form of [`average_moments`]: for a belief N(m, P) the h-average has
/// mean `offset + load * m` and variance `load^2 * P + var_const`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AverageCoefficients {
    pub offset: f64,
    pub load: f64,
    pub var_const: f64,
}

impl AverageCoefficients {
    pub fn new(model: &LinearGaussianModel, h: usize) -> Self {
        let a = model.state_coef;
        let q = model.state_sd * model.state_sd;
        let r = model.obs_sd * model.obs_sd;
        let hf = h as f64;
        // partial_k = sum_{m<k} a^m; x_{t+j} has constant const * partial_j
        let mut partial = 0.0;
        let mut pow = 1.0;
        let mut const_sum = 0.0;
        let mut partials = Vec::with_capacity(h + 1);
        partials.push(0.0);
        for _ in 0..h {
            partial += pow;
            pow *= a;
            partials.push(partial);
            const_sum += partial;
        }
        let load = a * partials[h] / hf;
        let shock: f64 = (1..=h).map(|i| partials[h - i + 1].powi(2)).sum();
        Self {
            offset: model.state_const * const_sum / hf,
            load,
            var_const: (q * shock + hf * r) / (hf * hf),
        }
    }

    #[inline]
    pub fn apply(&self, belief: GaussianBelief) -> Predictive {
        Predictive {
            mean: self.offset + self.load * belief.mean,
            var: self.load * self.load * belief.var + self.var_const,
        }
    }
}

impl Predictive {
    pub fn logpdf(&self, x: f64) -> f64 {
        let d = x - self.mean;
        -0.5 * (LN_2PI + self.var.ln() + d * d / self.var)
    }
}

/// Finite mixture of Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastMixture {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub vars: Vec<f64>,
}

impl ForecastMixture {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, vars: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != vars.len() {
            return invalid("mixture components must be nonempty and of equal length");
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || vars.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return invalid("mixture weights and variances must be finite and nonnegative");
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return invalid(format!("mixture weights sum to {total}, not 1"));
        }
        Ok(Self { weights, means, vars })
    }

    /// Equal-weight mixture of Gaussian predictives.
    pub fn equal_weights(components: &[Predictive]) -> Result<Self> {
        if components.is_empty() {
            return invalid("mixture needs at least one component");
        }
        let w = 1.0 / components.len() as f64;
        Ok(Self {
            weights: vec![w; components.len()],
            means: components.iter().map(|c| c.mean).collect(),
            vars: components.iter().map(|c| c.var).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, m)| w * m).sum()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.vars))
            .map(|(w, (m, v))| w * (v + (m - mu) * (m - mu)))
            .sum()
    }

    /// Log mixture density, computed with log-sum-exp.
    pub fn logpdf(&self, x: f64) -> f64 {
        log_sum_exp(self.weights.iter().zip(self.means.iter().zip(&self.vars)).filter(|(w, _)| **w > 0.0).map(|(w, (m, v))| {
            let d = x - m;
            w.ln() - 0.5 * (LN_2PI + v.ln() + d * d / v)
        }))
    }
}

/// Numerically stable log(sum(exp(x))). Returns -inf for an empty iterator.
pub fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    log_sum_exp_slice(&xs)
}

pub fn log_sum_exp_slice(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
