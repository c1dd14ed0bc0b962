//! Recursive out-of-sample evaluation.
//!
//! Targets are averages of the next h observations. Point forecasts are
//! scored by MSFE, density forecasts by the weighted likelihood ratio test of
//! Amisano and Giacomini with uniform weights and a Newey-West variance.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Result, RmdError};
use crate::models::ModelFamily;
use crate::rmdn::{fit_rmd_n, realized_average, RmdnConfig};
use crate::rmdx::{rmd_x_estimate, RmdxConfig};
use crate::statespace::forecast::AverageCoefficients;
use crate::statespace::mle::mle_fit;
use crate::statespace::{InclusionPath, TimeSeries};

pub const DEFAULT_BETA_GRID: [f64; 10] = [0.05, 0.10, 0.15, 0.20, 0.25, 0.35, 0.50, 0.70, 0.90, 1.00];
pub const DEFAULT_HORIZONS: [usize; 4] = [1, 4, 8, 12];
pub const DEFAULT_WARM_START: f64 = 0.5;
/// Observations required before the first forecast origin.
pub const MIN_TRAINING: usize = 40;
/// Largest tolerated share of failed origins.
pub const MAX_FAILURE_SHARE: f64 = 0.2;

/// Published MSFE of the stochastic-volatility outlier-adjusted UC model at
/// (horizon, msfe); horizon 1 was not reported.
pub const UCSVO_REFERENCE_MSFE: [(usize, f64); 3] = [(4, 1.09), (8, 0.81), (12, 0.69)];

/// Name of the fixed full-inclusion strategy.
pub const BASELINE_STRATEGY: &str = "beta=1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    /// Position of the last observation used.
    pub origin: usize,
    pub horizon: usize,
    pub point: f64,
    /// Log predictive density at the realized value.
    pub log_density: f64,
    pub realized: f64,
}

impl ForecastRecord {
    /// Time at which the realized value becomes known.
    pub fn realized_at(&self) -> usize {
        self.origin + self.horizon
    }
}

/// Mean squared forecast error of the records at `horizon`.
pub fn msfe(records: &[ForecastRecord], horizon: usize) -> Result<f64> {
    let errs: Vec<f64> = records
        .iter()
        .filter(|r| r.horizon == horizon)
        .map(|r| (r.point - r.realized).powi(2))
        .collect();
    if errs.is_empty() {
        return invalid(format!("no forecast records at horizon {horizon}"));
    }
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WlrResult {
    pub wlr_hat: f64,
    pub sigma_hat: f64,
    pub t_stat: f64,
    /// Standard normal CDF at `t_stat`; values near 1 favour the first model.
    pub p_right: f64,
}

/// Newey-West bandwidth floor(4 (n / 100)^(2/9)).
pub fn nw_bandwidth(n: usize) -> usize {
    (4.0 * (n as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize
}

/// Test of equal predictive log scores of model a versus model b.
pub fn wlr_test(logdens_a: &[f64], logdens_b: &[f64]) -> Result<WlrResult> {
    if logdens_a.len() != logdens_b.len() {
        return invalid("log-density sequences differ in length");
    }
    let n = logdens_a.len();
    if n < 8 {
        return invalid(format!("WLR test needs at least 8 pairs, got {n}"));
    }
    if logdens_a.iter().chain(logdens_b).any(|v| !v.is_finite()) {
        return invalid("log densities must be finite");
    }
    let d: Vec<f64> = logdens_a.iter().zip(logdens_b).map(|(a, b)| a - b).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let dev: Vec<f64> = d.iter().map(|v| v - mean).collect();
    let autocov = |lag: usize| dev[lag..].iter().zip(&dev).map(|(a, b)| a * b).sum::<f64>() / nf;
    let bw = nw_bandwidth(n);
    let mut lrv = autocov(0);
    for lag in 1..=bw.min(n - 1) {
        lrv += 2.0 * (1.0 - lag as f64 / (bw as f64 + 1.0)) * autocov(lag);
    }
    let sigma = lrv.max(0.0).sqrt();
    let t_stat = if sigma > 0.0 {
        nf.sqrt() * mean / sigma
    } else if mean == 0.0 {
        0.0
    } else {
        mean.signum() * f64::INFINITY
    };
    let p_right = Normal::standard().cdf(t_stat);
    Ok(WlrResult {
        wlr_hat: mean,
        sigma_hat: sigma,
        t_stat,
        p_right,
    })
}

/// Grid value minimizing past MSFE at `horizon`, using only records realized
/// by `decision_origin`. Ties go to the smaller value; with no usable records
/// the warm start is returned.
pub fn select_beta(history: &[(f64, &[ForecastRecord])], horizon: usize, decision_origin: usize, warm_start: f64) -> f64 {
    let mut sorted: Vec<&(f64, &[ForecastRecord])> = history.iter().collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best: Option<(f64, f64)> = None;
    for (beta, records) in sorted {
        let past: Vec<ForecastRecord> = records
            .iter()
            .filter(|r| r.horizon == horizon && r.realized_at() <= decision_origin)
            .copied()
            .collect();
        let Ok(m) = msfe(&past, horizon) else { continue };
        if best.is_none_or(|(_, b)| m < b) {
            best = Some((*beta, m));
        }
    }
    best.map_or(warm_start, |(beta, _)| beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    RmdX,
    RmdN,
    /// Plain maximum likelihood on all observations (beta = 1).
    None,
}

impl Estimator {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::RmdX => "rmd-x",
            Estimator::RmdN => "rmd-n",
            Estimator::None => "none",
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = RmdError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rmd-x" | "rmdx" => Ok(Estimator::RmdX),
            "rmd-n" | "rmdn" => Ok(Estimator::RmdN),
            "none" => Ok(Estimator::None),
            other => invalid(format!("unknown estimator {other:?}; expected rmd-x, rmd-n or none")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub grid: Vec<f64>,
    pub horizons: Vec<usize>,
    /// First evaluated origin, as a position in the series.
    pub eval_start: usize,
    pub warm_start: f64,
    pub rmdx: RmdxConfig,
    pub rmdn: RmdnConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            grid: DEFAULT_BETA_GRID.to_vec(),
            horizons: DEFAULT_HORIZONS.to_vec(),
            eval_start: MIN_TRAINING,
            warm_start: DEFAULT_WARM_START,
            rmdx: RmdxConfig::default(),
            rmdn: RmdnConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub estimator: String,
    pub beta_strategy: String,
    pub horizon: usize,
    pub msfe: f64,
    pub wlr: Option<f64>,
    pub wlr_se: Option<f64>,
    pub wlr_t: Option<f64>,
    pub wlr_p: Option<f64>,
    pub n_forecasts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn row(&self, strategy: &str, horizon: usize) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.beta_strategy == strategy && r.horizon == horizon)
    }
}

/// Beta chosen at one origin for one optimizing horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub origin: usize,
    pub strategy_horizon: usize,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub report: EvalReport,
    pub schedule: Vec<ScheduleEntry>,
    /// Forecast records of every grid value, keyed by beta.
    pub records: Vec<(f64, Vec<ForecastRecord>)>,
    /// Origins whose fit failed, per beta.
    pub failures: Vec<(f64, Vec<usize>)>,
    /// Full-sample filtered means and smoothed inclusion, per beta.
    pub full_sample: Vec<FullSampleFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullSampleFit {
    pub beta: f64,
    pub filtered_means: Vec<f64>,
    /// RMD-N only.
    pub smoothed_inclusion: Option<Vec<f64>>,
}

pub fn strategy_name(horizon: usize) -> String {
    format!("Q{horizon}")
}

fn check_config(series: &TimeSeries, estimator: Estimator, cfg: &EvalConfig) -> Result<Vec<f64>> {
    if cfg.horizons.is_empty() || cfg.horizons.contains(&0) {
        return invalid("horizons must be nonempty and positive");
    }
    if cfg.eval_start < MIN_TRAINING {
        return invalid(format!("eval_start must leave at least {MIN_TRAINING} training observations"));
    }
    let h_min = *cfg.horizons.iter().min().unwrap();
    if cfg.eval_start + h_min >= series.len() {
        return invalid("no evaluation origin has a realized target");
    }
    let mut grid = match estimator {
        Estimator::None => vec![1.0],
        _ => cfg.grid.clone(),
    };
    if grid.is_empty() || grid.iter().any(|b| !(*b > 0.0 && *b <= 1.0)) {
        return invalid("beta grid values must lie in (0, 1]");
    }
    if !grid.contains(&1.0) {
        grid.push(1.0);
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    Ok(grid)
}

/// Forecast records for one beta over all origins from MIN_TRAINING - 1 on.
fn records_for_beta(
    series: &TimeSeries,
    family: &ModelFamily,
    estimator: Estimator,
    beta: f64,
    cfg: &EvalConfig,
) -> Result<(Vec<ForecastRecord>, Vec<usize>, FullSampleFit)> {
    let values = series.values();
    let h_max = *cfg.horizons.iter().max().unwrap();
    let h_min = *cfg.horizons.iter().min().unwrap();
    let first = MIN_TRAINING - 1;
    let last = values.len() - 1 - h_min;
    match estimator {
        Estimator::RmdN => {
            let rcfg = RmdnConfig {
                horizons: cfg.horizons.clone(),
                forecast_start: MIN_TRAINING,
                ..cfg.rmdn.clone()
            };
            let fit = fit_rmd_n(family, series, beta, &rcfg)
                .map_err(|e| RmdError::EvaluationFailure(format!("RMD-N pass at beta = {beta} failed: {e}")))?;
            let records = fit
                .forecasts
                .iter()
                .filter_map(|f| {
                    Some(ForecastRecord {
                        origin: f.origin,
                        horizon: f.horizon,
                        point: f.mean,
                        log_density: f.log_density?,
                        realized: f.realized?,
                    })
                })
                .collect();
            let full = FullSampleFit {
                beta,
                filtered_means: fit.filtered_means,
                smoothed_inclusion: Some(fit.smoothed.probs),
            };
            Ok((records, Vec::new(), full))
        }
        Estimator::RmdX | Estimator::None => {
            let per_origin: Vec<(usize, Result<Vec<ForecastRecord>>)> = (first..=last)
                .into_par_iter()
                .map(|origin| {
                    let res = origin_forecasts(series, family, estimator, beta, origin, h_max, cfg);
                    (origin, res)
                })
                .collect();
            let mut records = Vec::new();
            let mut failed = Vec::new();
            for (origin, res) in per_origin {
                match res {
                    Ok(r) => records.extend(r),
                    Err(_) => failed.push(origin),
                }
            }
            let full = full_sample_means(series, family, estimator, beta, cfg)
                .map_err(|e| RmdError::EvaluationFailure(format!("full-sample fit at beta = {beta} failed: {e}")))?;
            Ok((records, failed, full))
        }
    }
}

fn full_sample_means(
    series: &TimeSeries,
    family: &ModelFamily,
    estimator: Estimator,
    beta: f64,
    cfg: &EvalConfig,
) -> Result<FullSampleFit> {
    let filtered_means = if estimator == Estimator::None {
        let path = InclusionPath::all(series.len());
        let fit = mle_fit(family, series, &path, &cfg.rmdx.mle)?;
        fit.model.filter(series.values(), &path)?.means()
    } else {
        let xcfg = RmdxConfig {
            beta,
            h_max: 1,
            keep_per_path: false,
            ..cfg.rmdx.clone()
        };
        rmd_x_estimate(family, series, &xcfg)?.x_bar
    };
    Ok(FullSampleFit {
        beta,
        filtered_means,
        smoothed_inclusion: None,
    })
}

fn origin_forecasts(
    series: &TimeSeries,
    family: &ModelFamily,
    estimator: Estimator,
    beta: f64,
    origin: usize,
    h_max: usize,
    cfg: &EvalConfig,
) -> Result<Vec<ForecastRecord>> {
    let values = series.values();
    let train = series.prefix(origin + 1)?;
    let targets: Vec<(usize, f64)> = cfg
        .horizons
        .iter()
        .filter_map(|&h| realized_average(values, origin, h).map(|r| (h, r)))
        .collect();
    match estimator {
        Estimator::None => {
            let path = InclusionPath::all(train.len());
            let fit = mle_fit(family, &train, &path, &cfg.rmdx.mle)?;
            let last = fit.model.filter(train.values(), &path)?.last();
            Ok(targets
                .into_iter()
                .map(|(h, realized)| {
                    let pred = AverageCoefficients::new(&fit.model.dynamics, h).apply(last);
                    ForecastRecord {
                        origin,
                        horizon: h,
                        point: pred.mean,
                        log_density: pred.logpdf(realized),
                        realized,
                    }
                })
                .collect())
        }
        Estimator::RmdX => {
            let xcfg = RmdxConfig {
                beta,
                h_max,
                seed: cfg.rmdx.seed.wrapping_add(origin as u64),
                keep_per_path: false,
                ..cfg.rmdx.clone()
            };
            let res = rmd_x_estimate(family, &train, &xcfg)?;
            Ok(targets
                .into_iter()
                .map(|(h, realized)| ForecastRecord {
                    origin,
                    horizon: h,
                    point: res.forecast_bar[h - 1],
                    log_density: res.forecast_mixture[h - 1].logpdf(realized),
                    realized,
                })
                .collect())
        }
        Estimator::RmdN => unreachable!("RMD-N forecasts come from one sequential pass"),
    }
}

/// Recursive evaluation with per-origin beta selection.
///
/// Each grid value produces forecasts at every origin from the training
/// minimum on, using data up to the origin only. At evaluation origins
/// (from `eval_start`), strategy Qk uses the grid value with the lowest MSFE
/// at horizon k among forecasts already realized at the origin. The
/// `beta=1` strategy is the unrandomized model and the WLR baseline.
pub fn run_recursive_evaluation(
    series: &TimeSeries,
    family: &ModelFamily,
    estimator: Estimator,
    cfg: &EvalConfig,
) -> Result<EvalOutput> {
    family.validate()?;
    let grid = check_config(series, estimator, cfg)?;
    let results = grid
        .iter()
        .map(|&beta| records_for_beta(series, family, estimator, beta, cfg).map(|r| (beta, r)))
        .collect::<Result<Vec<_>>>()?;

    let n_origins = series.len() - MIN_TRAINING - *cfg.horizons.iter().min().unwrap() + 1;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut full_sample = Vec::new();
    for (beta, (recs, failed, full)) in results {
        if failed.len() as f64 > MAX_FAILURE_SHARE * n_origins as f64 {
            return Err(RmdError::EvaluationFailure(format!(
                "{} of {n_origins} origins failed at beta = {beta}",
                failed.len()
            )));
        }
        records.push((beta, recs));
        failures.push((beta, failed));
        full_sample.push(full);
    }

    // lookup (beta index, origin, horizon) -> record
    let lookup: Vec<BTreeMap<(usize, usize), ForecastRecord>> = records
        .iter()
        .map(|(_, recs)| recs.iter().map(|r| ((r.origin, r.horizon), *r)).collect())
        .collect();
    let history: Vec<(f64, &[ForecastRecord])> = records.iter().map(|(b, r)| (*b, r.as_slice())).collect();
    let baseline = grid.iter().position(|&b| b == 1.0).unwrap();

    let eval_origins: Vec<usize> = (cfg.eval_start..series.len()).collect();
    let mut schedule = Vec::new();
    let mut strategies: Vec<(String, Vec<(usize, usize)>)> = Vec::new();
    let strategy_horizons: Vec<usize> = if grid.len() == 1 { Vec::new() } else { cfg.horizons.clone() };
    for &q in &strategy_horizons {
        let mut chosen = Vec::new();
        for &origin in &eval_origins {
            let beta = select_beta(&history, q, origin, cfg.warm_start);
            schedule.push(ScheduleEntry {
                origin,
                strategy_horizon: q,
                beta,
            });
            let idx = grid.iter().position(|&b| b == beta).unwrap_or(baseline);
            chosen.push((origin, idx));
        }
        strategies.push((strategy_name(q), chosen));
    }
    strategies.push((BASELINE_STRATEGY.to_string(), eval_origins.iter().map(|&o| (o, baseline)).collect()));

    let mut rows = Vec::new();
    for (name, chosen) in &strategies {
        for &h in &cfg.horizons {
            let mut picked = Vec::new();
            let mut base = Vec::new();
            for &(origin, idx) in chosen {
                if let (Some(r), Some(b)) = (lookup[idx].get(&(origin, h)), lookup[baseline].get(&(origin, h))) {
                    picked.push(*r);
                    base.push(*b);
                }
            }
            if picked.is_empty() {
                continue;
            }
            let m = msfe(&picked, h)?;
            let a: Vec<f64> = picked.iter().map(|r| r.log_density).collect();
            let b: Vec<f64> = base.iter().map(|r| r.log_density).collect();
            let wlr = if name == BASELINE_STRATEGY { None } else { wlr_test(&a, &b).ok() };
            rows.push(ReportRow {
                model: family.tag.to_string(),
                estimator: estimator.as_str().to_string(),
                beta_strategy: name.clone(),
                horizon: h,
                msfe: m,
                wlr: wlr.map(|w| w.wlr_hat),
                wlr_se: wlr.map(|w| w.sigma_hat),
                wlr_t: wlr.map(|w| w.t_stat),
                wlr_p: wlr.map(|w| w.p_right),
                n_forecasts: picked.len(),
            });
        }
    }
    Ok(EvalOutput {
        report: EvalReport { rows },
        schedule,
        records,
        failures,
        full_sample,
    })
}

/// WLR comparison of one fixed beta against the baseline over aligned origins.
pub fn compare_fixed_beta(
    records_a: &[ForecastRecord],
    records_base: &[ForecastRecord],
    horizon: usize,
    from_origin: usize,
) -> Result<WlrResult> {
    let base: BTreeMap<usize, f64> = records_base
        .iter()
        .filter(|r| r.horizon == horizon && r.origin >= from_origin)
        .map(|r| (r.origin, r.log_density))
        .collect();
    let (a, b): (Vec<f64>, Vec<f64>) = records_a
        .iter()
        .filter(|r| r.horizon == horizon && r.origin >= from_origin)
        .filter_map(|r| base.get(&r.origin).map(|b| (r.log_density, *b)))
        .unzip();
    wlr_test(&a, &b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(origin: usize, horizon: usize, point: f64, realized: f64) -> ForecastRecord {
        ForecastRecord {
            origin,
            horizon,
            point,
            log_density: 0.0,
            realized,
        }
    }

    #[test]
    fn msfe_examples() {
        assert_eq!(msfe(&[rec(0, 1, 2.0, 3.0)], 1).unwrap(), 1.0);
        assert_eq!(msfe(&[rec(0, 1, 2.0, 2.0), rec(1, 1, -1.0, -1.0)], 1).unwrap(), 0.0);
        let three = [rec(0, 4, 1.0, 0.0), rec(1, 4, -2.0, 0.0), rec(2, 4, 0.0, 0.0)];
        assert!((msfe(&three, 4).unwrap() - 5.0 / 3.0).abs() < 1e-15);
        assert!(msfe(&three, 1).is_err());
    }

    #[test]
    fn wlr_identical_and_antisymmetric() {
        let a: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let r = wlr_test(&a, &a).unwrap();
        assert_eq!((r.wlr_hat, r.t_stat, r.p_right), (0.0, 0.0, 0.5));
        let b: Vec<f64> = (0..20).map(|i| (i as f64 * 0.7).cos()).collect();
        let ab = wlr_test(&a, &b).unwrap();
        let ba = wlr_test(&b, &a).unwrap();
        assert_eq!(ab.wlr_hat, -ba.wlr_hat);
        assert_eq!(ab.t_stat, -ba.t_stat);
        assert!(wlr_test(&a[..5], &b[..5]).is_err());
        assert!(wlr_test(&a, &b[..10]).is_err());
    }

    #[test]
    fn wlr_constant_difference_is_infinite() {
        let a = vec![1.0; 10];
        let b = vec![0.5; 10];
        let r = wlr_test(&a, &b).unwrap();
        assert_eq!(r.t_stat, f64::INFINITY);
        assert_eq!(r.p_right, 1.0);
    }

    #[test]
    fn bandwidth_rule() {
        assert_eq!(nw_bandwidth(100), 4);
        assert_eq!(nw_bandwidth(10), 2);
        assert_eq!(nw_bandwidth(10_000), 11);
    }

    #[test]
    fn selection_rules() {
        let a = [rec(0, 1, 0.0, 0.5f64.sqrt())];
        let b = [rec(0, 1, 0.0, 0.9f64.sqrt())];
        let hist: Vec<(f64, &[ForecastRecord])> = vec![(0.15, &a), (1.0, &b)];
        assert_eq!(select_beta(&hist, 1, 1, 0.5), 0.15);
        let hist: Vec<(f64, &[ForecastRecord])> = vec![(1.0, &a), (0.25, &a), (0.5, &a)];
        assert_eq!(select_beta(&hist, 1, 1, 0.5), 0.25);
        // not yet realized at origin 0
        assert_eq!(select_beta(&hist, 1, 0, 0.5), 0.5);
    }

    #[test]
    fn selection_is_per_horizon() {
        let r25 = [rec(0, 12, 1.0, 1.0), rec(0, 1, 0.0, 2.0)];
        let r1 = [rec(0, 12, 0.0, 1.0), rec(0, 1, 2.0, 2.0)];
        let hist: Vec<(f64, &[ForecastRecord])> = vec![(0.25, &r25), (1.0, &r1)];
        assert_eq!(select_beta(&hist, 12, 12, 0.5), 0.25);
        assert_eq!(select_beta(&hist, 1, 12, 0.5), 1.0);
    }
}
