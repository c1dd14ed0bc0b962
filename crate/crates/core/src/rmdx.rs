//! Exogenous randomization.
//!
//! Inclusion paths with exactly `round(beta * T)` included observations are
//! drawn uniformly, the model is fit by maximum likelihood on each path, and
//! parameters, filtered states and forecasts are averaged with equal weight.

use itertools::Itertools;
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, RmdError};
use crate::models::ModelFamily;
use crate::rng::{stream, Purpose};
use crate::statespace::forecast::{average_moments, ForecastMixture, Predictive};
use crate::statespace::kalman::{filter_values, LinearGaussianModel};
use crate::statespace::mle::{mle_fit, MleOptions};
use crate::statespace::{InclusionPath, TimeSeries};

pub const DEFAULT_N_PATHS: usize = 200;

/// Number of included observations per path: `beta * len` rounded to the
/// nearest integer, ties away from zero.
pub fn subset_size(len: usize, beta: f64) -> usize {
    (beta * len as f64).round() as usize
}

/// Fixed-size uniform path sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSampler {
    pub len: usize,
    pub beta: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Identifiability floor of the family the paths will be used with.
    pub min_included: usize,
}

impl PathSampler {
    pub fn new(len: usize, beta: f64, n_paths: usize, seed: u64) -> Self {
        Self {
            len,
            beta,
            n_paths,
            seed,
            min_included: 1,
        }
    }

    pub fn with_floor(mut self, min_included: usize) -> Self {
        self.min_included = min_included.max(1);
        self
    }

    /// Checks the sampler and returns the subset size.
    pub fn validate(&self) -> Result<usize> {
        if !(0.0..=1.0).contains(&self.beta) {
            return invalid(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        if self.beta == 0.0 {
            return Err(RmdError::EmptySubset("beta = 0 includes no observations".into()));
        }
        if self.n_paths == 0 {
            return invalid("n_paths must be at least 1");
        }
        if self.len == 0 {
            return invalid("series length must be at least 1");
        }
        let k = subset_size(self.len, self.beta);
        if k < self.min_included {
            return Err(RmdError::UnderIdentified {
                included: k,
                required: self.min_included,
            });
        }
        Ok(k)
    }
}

/// Draw `n_paths` inclusion paths. Path `i` uses its own random stream, so
/// the result depends only on the seed and `i`.
pub fn sample_paths(sampler: &PathSampler) -> Result<Vec<InclusionPath>> {
    let k = sampler.validate()?;
    Ok((0..sampler.n_paths)
        .map(|i| {
            let mut rng = stream(sampler.seed, Purpose::PathSampling, 0, i as u64);
            let mut pos = index::sample(&mut rng, sampler.len, k).into_vec();
            pos.sort_unstable();
            InclusionPath::from_positions(sampler.len, &pos)
        })
        .collect())
}

/// Every path of length `len` with exactly `k` inclusions, in lexicographic
/// order of included positions.
pub fn enumerate_fixed_size_paths(len: usize, k: usize) -> Vec<InclusionPath> {
    (0..len)
        .combinations(k)
        .map(|pos| InclusionPath::from_positions(len, &pos))
        .collect()
}

/// Scale on which positive parameters are averaged across paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThetaScale {
    /// Geometric mean of standard deviations.
    #[default]
    Log,
    /// Plain arithmetic mean of every parameter.
    Natural,
}

/// How inclusion paths are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathMode {
    #[default]
    Sampled,
    /// All C(T, k) subsets; only sensible for short series.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmdxConfig {
    pub beta: f64,
    pub n_paths: usize,
    /// Largest forecast horizon; forecasts are produced for 1..=h_max.
    pub h_max: usize,
    pub seed: u64,
    pub theta_scale: ThetaScale,
    pub path_mode: PathMode,
    pub keep_per_path: bool,
    pub mle: MleOptions,
}

impl Default for RmdxConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            n_paths: DEFAULT_N_PATHS,
            h_max: 12,
            seed: 0,
            theta_scale: ThetaScale::Log,
            path_mode: PathMode::Sampled,
            keep_per_path: false,
            mle: MleOptions::default(),
        }
    }
}

/// Estimates from one inclusion path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEstimate {
    pub path_index: usize,
    pub theta: Vec<f64>,
    pub loglik: f64,
    pub filtered_means: Vec<f64>,
    /// Predictive of the h-step average for h = 1..=h_max.
    pub forecasts: Vec<Predictive>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmdxResult {
    pub theta_bar: Vec<f64>,
    pub x_bar: Vec<f64>,
    /// Average point forecast of the h-step average, index h - 1.
    pub forecast_bar: Vec<f64>,
    /// Equal-weight mixture over paths of the h-step average predictive, index h - 1.
    pub forecast_mixture: Vec<ForecastMixture>,
    pub n_paths: usize,
    /// Paths dropped because estimation failed.
    pub n_failed: usize,
    pub per_path: Option<Vec<PathEstimate>>,
}

impl RmdxResult {
    pub fn point_forecast(&self, h: usize) -> Option<f64> {
        h.checked_sub(1).and_then(|i| self.forecast_bar.get(i).copied())
    }

    pub fn mixture(&self, h: usize) -> Option<&ForecastMixture> {
        h.checked_sub(1).and_then(|i| self.forecast_mixture.get(i))
    }
}

fn paths_for(family: &ModelFamily, len: usize, cfg: &RmdxConfig) -> Result<Vec<InclusionPath>> {
    let sampler = PathSampler::new(len, cfg.beta, cfg.n_paths, cfg.seed).with_floor(family.identifiability_floor());
    let k = sampler.validate()?;
    if k == len {
        // a single admissible path; the mixture collapses to the base model
        return Ok(vec![InclusionPath::all(len)]);
    }
    match cfg.path_mode {
        PathMode::Sampled => sample_paths(&sampler),
        PathMode::Exhaustive => Ok(enumerate_fixed_size_paths(len, k)),
    }
}

fn estimate_path(
    family: &ModelFamily,
    series: &TimeSeries,
    path: &InclusionPath,
    path_index: usize,
    cfg: &RmdxConfig,
) -> Result<PathEstimate> {
    let fit = mle_fit(family, series, path, &cfg.mle)?;
    let out = fit.model.filter(series.values(), path)?;
    let last = out.last();
    let forecasts = (1..=cfg.h_max)
        .map(|h| average_moments(&fit.model.dynamics, last, h))
        .collect();
    Ok(PathEstimate {
        path_index,
        theta: fit.theta,
        loglik: fit.loglik,
        filtered_means: out.means(),
        forecasts,
    })
}

/// Average parameters across paths. A single estimate is returned unchanged.
pub fn aggregate_theta(family: &ModelFamily, thetas: &[&[f64]], scale: ThetaScale) -> Vec<f64> {
    if thetas.len() == 1 {
        return thetas[0].to_vec();
    }
    let n = thetas.len() as f64;
    let dim = thetas[0].len();
    let positive = family.positive_params();
    (0..dim)
        .map(|j| {
            if scale == ThetaScale::Log && positive.contains(&j) {
                (thetas.iter().map(|t| t[j].ln()).sum::<f64>() / n).exp()
            } else {
                thetas.iter().map(|t| t[j]).sum::<f64>() / n
            }
        })
        .collect()
}

fn mean_columns(rows: &[&[f64]]) -> Vec<f64> {
    if rows.len() == 1 {
        return rows[0].to_vec();
    }
    let n = rows.len() as f64;
    let mut acc = vec![0.0; rows[0].len()];
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r.iter()) {
            *a += v;
        }
    }
    acc.iter().map(|a| a / n).collect()
}

/// Per-path MLE, filtering and forecasting, then equal-weight aggregation.
///
/// Paths run in parallel; results land in per-path slots and are reduced in
/// index order, so the output does not depend on the thread count.
pub fn rmd_x_estimate(family: &ModelFamily, series: &TimeSeries, cfg: &RmdxConfig) -> Result<RmdxResult> {
    family.validate()?;
    if cfg.h_max == 0 {
        return invalid("h_max must be at least 1");
    }
    let paths = paths_for(family, series.len(), cfg)?;
    let results: Vec<Result<PathEstimate>> = paths
        .par_iter()
        .enumerate()
        .map(|(i, p)| estimate_path(family, series, p, i, cfg))
        .collect();

    let n_paths = paths.len();
    let ok: Vec<PathEstimate> = results.into_iter().filter_map(|r| r.ok()).collect();
    let n_failed = n_paths - ok.len();
    if ok.is_empty() {
        return Err(RmdError::EstimationFailure(format!("all {n_paths} inclusion paths failed to fit")));
    }
    if (ok.len() as f64) < 0.1 * n_paths as f64 {
        return Err(RmdError::EstimationFailure(format!(
            "only {} of {n_paths} inclusion paths fit successfully",
            ok.len()
        )));
    }

    let thetas: Vec<&[f64]> = ok.iter().map(|p| p.theta.as_slice()).collect();
    let theta_bar = aggregate_theta(family, &thetas, cfg.theta_scale);
    let means: Vec<&[f64]> = ok.iter().map(|p| p.filtered_means.as_slice()).collect();
    let x_bar = mean_columns(&means);
    let points: Vec<Vec<f64>> = ok.iter().map(|p| p.forecasts.iter().map(|f| f.mean).collect()).collect();
    let point_refs: Vec<&[f64]> = points.iter().map(|v| v.as_slice()).collect();
    let forecast_bar = mean_columns(&point_refs);
    let forecast_mixture = (0..cfg.h_max)
        .map(|h| {
            let comps: Vec<Predictive> = ok.iter().map(|p| p.forecasts[h]).collect();
            ForecastMixture::equal_weights(&comps)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(RmdxResult {
        theta_bar,
        x_bar,
        forecast_bar,
        forecast_mixture,
        n_paths,
        n_failed,
        per_path: cfg.keep_per_path.then_some(ok),
    })
}

/// Filtered-state mixture at known parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownThetaAggregate {
    /// Mixture mean of the filtered state at each time.
    pub x_bar: Vec<f64>,
    /// Mixture variance of the filtered state at each time.
    pub x_var: Vec<f64>,
}

/// Equal-weight mixture over `paths` of the filtered state at a fixed model.
pub fn aggregate_known_theta(
    model: &LinearGaussianModel,
    series: &TimeSeries,
    paths: &[InclusionPath],
) -> Result<KnownThetaAggregate> {
    if paths.is_empty() {
        return invalid("at least one path is required");
    }
    model.validate()?;
    let len = series.len();
    let outs = paths
        .iter()
        .map(|p| {
            if p.len() != len {
                return invalid("path length does not match series length");
            }
            filter_values(model, series.values(), p)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = outs.len() as f64;
    let mut x_bar = vec![0.0; len];
    let mut second = vec![0.0; len];
    for out in &outs {
        for (t, b) in out.filtered.iter().enumerate() {
            x_bar[t] += b.mean / n;
            second[t] += (b.var + b.mean * b.mean) / n;
        }
    }
    let x_var = x_bar.iter().zip(&second).map(|(m, s)| (s - m * m).max(0.0)).collect();
    Ok(KnownThetaAggregate { x_bar, x_var })
}
