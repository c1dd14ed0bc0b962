use serde::{Deserialize, Serialize};

use super::series::{InclusionPath, TimeSeries};
use crate::error::{invalid, Result, RmdError};
use crate::models::{ModelFamily, ModelInstance};
use crate::optim::{nelder_mead, SimplexOptions};

/// Unconstrained coordinates outside this box are rejected by the objective.
const MAX_ABS_COORD: f64 = 40.0;

/// Optimizer settings for [`mle_fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    pub max_iter: usize,
    pub size_tol: f64,
    /// Start points in natural parameters; `None` uses the family's
    /// data-scaled defaults.
    pub starts: Option<Vec<Vec<f64>>>,
    /// Carried for API symmetry with the stochastic estimators. The fit is
    /// deterministic and never reads it.
    pub seed: u64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            size_tol: 1e-8,
            starts: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleFit {
    pub family: ModelFamily,
    /// Natural parameters, ordered as [`ModelFamily::param_names`].
    pub theta: Vec<f64>,
    pub model: ModelInstance,
    pub loglik: f64,
    pub iterations: usize,
}

/// First included observation, used as the mean of the diffuse initial prior.
pub fn diffuse_init_mean(values: &[f64], path: &InclusionPath) -> f64 {
    path.included_positions().next().map(|t| values[t]).unwrap_or(0.0)
}

/// Log-likelihood of the included observations at natural parameters `theta`.
pub fn family_loglik(family: &ModelFamily, theta: &[f64], series: &TimeSeries, path: &InclusionPath) -> Result<f64> {
    if series.len() != path.len() {
        return invalid("inclusion path length does not match series length");
    }
    let model = family
        .instantiate(theta)?
        .with_init_mean(diffuse_init_mean(series.values(), path));
    Ok(model.loglik(series.values(), path))
}

/// Maximum-likelihood fit over the included subset.
///
/// Runs a Nelder-Mead search from each start point on log standard
/// deviations (and logit kappa, log(nu - 2)) and keeps the best converged run.
pub fn mle_fit(family: &ModelFamily, series: &TimeSeries, path: &InclusionPath, opts: &MleOptions) -> Result<MleFit> {
    family.validate()?;
    if series.len() != path.len() {
        return invalid(format!(
            "inclusion path length {} does not match series length {}",
            path.len(),
            series.len()
        ));
    }
    let included = path.count_included();
    let required = family.identifiability_floor();
    if included < required {
        return Err(RmdError::UnderIdentified { included, required });
    }
    let values = series.values();
    let init_mean = diffuse_init_mean(values, path);
    let included_values: Vec<f64> = path.included_positions().map(|t| values[t]).collect();
    let starts = match &opts.starts {
        Some(s) => s.clone(),
        None => family.start_points(&included_values),
    };
    if starts.is_empty() {
        return invalid("at least one start point is required");
    }

    let objective = |z: &[f64]| -> f64 {
        if z.iter().any(|v| !v.is_finite() || v.abs() > MAX_ABS_COORD) {
            return f64::INFINITY;
        }
        let theta = family.from_unconstrained(z);
        match family.instantiate(&theta) {
            Ok(m) => -m.with_init_mean(init_mean).loglik(values, path),
            Err(_) => f64::INFINITY,
        }
    };
    let simplex = SimplexOptions {
        max_iter: opts.max_iter,
        size_tol: opts.size_tol,
        ..Default::default()
    };

    let mut best_converged: Option<(Vec<f64>, f64, usize)> = None;
    let mut best_any: Option<(Vec<f64>, f64)> = None;
    let mut total_iter = 0;
    for start in &starts {
        let z0 = family.to_unconstrained(start)?;
        let r = nelder_mead(objective, &z0, &simplex);
        total_iter += r.iterations;
        if best_any.as_ref().is_none_or(|(_, f)| r.fx < *f) {
            best_any = Some((r.x.clone(), r.fx));
        }
        if r.converged && best_converged.as_ref().is_none_or(|(_, f, _)| r.fx < *f) {
            best_converged = Some((r.x, r.fx, r.iterations));
        }
    }

    match best_converged {
        Some((z, fx, iterations)) if fx.is_finite() => {
            let theta = family.from_unconstrained(&z);
            let model = family.instantiate(&theta)?.with_init_mean(init_mean);
            Ok(MleFit {
                family: *family,
                theta,
                model,
                loglik: -fx,
                iterations,
            })
        }
        _ => {
            let (z, fx) = best_any.expect("at least one start was run");
            Err(RmdError::ConvergenceFailure {
                iterations: total_iter,
                best: family.from_unconstrained(&z),
                best_loglik: -fx,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn too_few_observations() {
        let s = TimeSeries::unlabelled(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = InclusionPath::from_bools(&[true, false, true, false]);
        assert!(matches!(
            mle_fit(&ModelFamily::uc(), &s, &p, &MleOptions::default()),
            Err(RmdError::UnderIdentified { included: 2, required: 3 })
        ));
        let all = InclusionPath::all(4);
        assert!(matches!(
            mle_fit(&ModelFamily::ar(), &s, &all, &MleOptions::default()),
            Err(RmdError::UnderIdentified { included: 4, required: 5 })
        ));
    }

    #[test]
    fn constant_series_drives_noise_to_zero() {
        let s = TimeSeries::unlabelled(vec![2.5; 40]).unwrap();
        let fit = mle_fit(&ModelFamily::uc(), &s, &InclusionPath::all(40), &MleOptions::default()).unwrap();
        assert!(fit.theta[1] <= 1e-4, "{:?}", fit.theta);
    }

    #[test]
    fn convergence_failure_carries_best() {
        let s = TimeSeries::unlabelled((0..30).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        let opts = MleOptions {
            max_iter: 2,
            ..Default::default()
        };
        match mle_fit(&ModelFamily::uc(), &s, &InclusionPath::all(30), &opts) {
            Err(RmdError::ConvergenceFailure { best, best_loglik, .. }) => {
                assert_eq!(best.len(), 2);
                assert!(best_loglik.is_finite());
            }
            other => panic!("expected convergence failure, got {other:?}"),
        }
    }
}
