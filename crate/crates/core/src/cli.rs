//! Command-line front end for the `rmd` binary.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{
    load_series, simulate_contaminated, write_series_csv, ContaminationMechanism, ContaminationSpec, DEFAULT_SIM_LEN,
    DEFAULT_SIM_START,
};
use crate::eval::{
    msfe, run_recursive_evaluation, select_beta, EvalConfig, EvalOutput, Estimator, DEFAULT_BETA_GRID,
    DEFAULT_HORIZONS, DEFAULT_WARM_START, MIN_TRAINING,
};
use crate::models::{FamilyTag, ModelFamily};
use crate::rmdn::{fit_rmd_n, RmdnConfig, Smoother, DEFAULT_INNER_CAP, DEFAULT_N_THETA};
use crate::rmdx::{rmd_x_estimate, RmdxConfig, DEFAULT_N_PATHS};
use crate::statespace::{mle_fit, AverageCoefficients, InclusionPath, MleOptions, Quarter, TimeSeries};
use crate::RmdError;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ESTIMATION: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Estimation(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Estimation(_) => EXIT_ESTIMATION,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl From<RmdError> for CliError {
    fn from(e: RmdError) -> Self {
        let msg = e.to_string();
        match e {
            RmdError::InvalidInput(_)
            | RmdError::DegenerateModel(_)
            | RmdError::UnderIdentified { .. }
            | RmdError::EmptySubset(_) => CliError::Config(msg),
            RmdError::Io(_) | RmdError::Csv(_) => CliError::Io(msg),
            RmdError::Json(_) => CliError::Config(msg),
            RmdError::ConvergenceFailure { .. }
            | RmdError::EstimationFailure(_)
            | RmdError::FilterDegeneracy { .. }
            | RmdError::InvalidState(_)
            | RmdError::EvaluationFailure(_) => CliError::Estimation(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "rmd", version, about = "Randomized missing data filtering, estimation and forecast evaluation")]
pub struct Cli {
    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "RMD_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a contaminated series and write series.csv and truth.json.
    Simulate(SimulateArgs),
    /// Fit one or more inclusion rates; writes fit.json and plot series.
    Fit(RunArgs),
    /// Forecast h-step averages from the end of the sample.
    Forecast(RunArgs),
    /// Recursive out-of-sample evaluation over a beta grid.
    Evaluate(RunArgs),
    /// Pick the inclusion rate per criterion horizon from realized forecasts.
    SelectBeta(RunArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model family: uc, ar, armf or uc-t.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// True parameters in the family's natural order.
    #[arg(long, value_delimiter = ',')]
    pub theta: Option<Vec<f64>>,
    #[arg(long)]
    pub len: Option<usize>,
    /// First quarter, e.g. 1960Q2.
    #[arg(long)]
    pub start: Option<String>,
    #[arg(long)]
    pub rate: Option<f64>,
    /// Outlier size in units of the measurement standard deviation.
    #[arg(long)]
    pub magnitude: Option<f64>,
    /// additive-shift or predictive-replacement.
    #[arg(long)]
    pub mechanism: Option<String>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// CSV with header date,value.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// rmd-x, rmd-n or none.
    #[arg(long)]
    pub estimator: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub beta: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub beta_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<usize>>,
    /// First evaluation origin: a quarter such as 1990Q1 or a 0-based position.
    #[arg(long)]
    pub eval_start: Option<String>,
    #[arg(long)]
    pub warm_start: Option<f64>,
    #[arg(long)]
    pub n_theta: Option<usize>,
    #[arg(long)]
    pub inner_cap: Option<usize>,
    #[arg(long)]
    pub n_paths: Option<usize>,
    /// Use the fixed-lag smoother with this lag.
    #[arg(long)]
    pub fixed_lag: Option<usize>,
}

/// Contents of the JSON configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: FamilyTag,
    pub t_dof: Option<f64>,
    pub estimator: Estimator,
    pub beta: Vec<f64>,
    pub beta_grid: Vec<f64>,
    pub horizons: Vec<usize>,
    pub n_theta: usize,
    pub inner_cap: Option<usize>,
    pub n_paths: usize,
    pub fixed_lag: Option<usize>,
    pub seed: Option<u64>,
    pub input: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub eval_start: Option<String>,
    pub warm_start: f64,
    pub simulate: SimulateConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub theta: Option<Vec<f64>>,
    pub len: usize,
    pub start: Quarter,
    pub rate: f64,
    pub magnitude: f64,
    pub mechanism: ContaminationMechanism,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            theta: None,
            len: DEFAULT_SIM_LEN,
            start: DEFAULT_SIM_START,
            rate: 0.1,
            magnitude: 10.0,
            mechanism: ContaminationMechanism::AdditiveShift,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: FamilyTag::Uc,
            t_dof: None,
            estimator: Estimator::RmdN,
            beta: vec![0.15, 1.0],
            beta_grid: DEFAULT_BETA_GRID.to_vec(),
            horizons: DEFAULT_HORIZONS.to_vec(),
            n_theta: DEFAULT_N_THETA,
            inner_cap: Some(DEFAULT_INNER_CAP),
            n_paths: DEFAULT_N_PATHS,
            fixed_lag: None,
            seed: None,
            input: None,
            out_dir: PathBuf::from("."),
            eval_start: None,
            warm_start: DEFAULT_WARM_START,
            simulate: SimulateConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn family(&self) -> ModelFamily {
        let mut f = ModelFamily::from_tag(self.model);
        if self.model == FamilyTag::UcT && self.t_dof.is_some() {
            f.t_dof = self.t_dof;
        }
        f
    }

    fn seed(&self) -> CliResult<u64> {
        self.seed
            .ok_or_else(|| CliError::Config("a seed is required (--seed or \"seed\" in the config)".into()))
    }

    fn rmdn(&self) -> RmdnConfig {
        RmdnConfig {
            n_theta: self.n_theta,
            inner_cap: self.inner_cap,
            smoother: self.fixed_lag.map_or(Smoother::Ancestry, Smoother::FixedLag),
            seed: self.seed.unwrap_or(0),
            ..Default::default()
        }
    }

    fn rmdx(&self, beta: f64) -> RmdxConfig {
        RmdxConfig {
            beta,
            n_paths: self.n_paths,
            h_max: self.horizons.iter().copied().max().unwrap_or(1),
            seed: self.seed.unwrap_or(0),
            mle: MleOptions {
                seed: self.seed.unwrap_or(0),
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn input_series(&self) -> CliResult<TimeSeries> {
        let path = self
            .input
            .as_ref()
            .ok_or_else(|| CliError::Config("an input series is required (--input)".into()))?;
        if !path.exists() {
            return Err(CliError::Config(format!("input file {} does not exist", path.display())));
        }
        Ok(load_series(path)?)
    }

    fn eval_start(&self, series: &TimeSeries) -> CliResult<usize> {
        let Some(s) = &self.eval_start else {
            return Ok(MIN_TRAINING);
        };
        if let Ok(pos) = s.trim().parse::<usize>() {
            return Ok(pos);
        }
        let q: Quarter = s.parse()?;
        series
            .position_of(q)
            .ok_or_else(|| CliError::Config(format!("eval start {q} is outside the sample")))
    }
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", p.display())))
        }
    }
}

fn apply_common(cfg: &mut RunConfig, a: &CommonArgs) -> CliResult<()> {
    if let Some(s) = a.seed {
        cfg.seed = Some(s);
    }
    if let Some(m) = &a.model {
        cfg.model = m.parse()?;
    }
    if let Some(o) = &a.out_dir {
        cfg.out_dir = o.clone();
    }
    Ok(())
}

fn simulate_config(a: &SimulateArgs) -> CliResult<RunConfig> {
    let mut cfg = load_config(a.common.config.as_deref())?;
    apply_common(&mut cfg, &a.common)?;
    let s = &mut cfg.simulate;
    if let Some(t) = &a.theta {
        s.theta = Some(t.clone());
    }
    if let Some(n) = a.len {
        s.len = n;
    }
    if let Some(q) = &a.start {
        s.start = q.parse()?;
    }
    if let Some(r) = a.rate {
        s.rate = r;
    }
    if let Some(m) = a.magnitude {
        s.magnitude = m;
    }
    if let Some(m) = &a.mechanism {
        s.mechanism = match m.as_str() {
            "additive-shift" | "additive_shift" => ContaminationMechanism::AdditiveShift,
            "predictive-replacement" | "predictive_replacement" => ContaminationMechanism::PredictiveReplacement,
            other => return Err(CliError::Config(format!("unknown contamination mechanism {other:?}"))),
        };
    }
    Ok(cfg)
}

pub fn run_config(a: &RunArgs) -> CliResult<RunConfig> {
    let mut cfg = load_config(a.common.config.as_deref())?;
    apply_common(&mut cfg, &a.common)?;
    if let Some(p) = &a.input {
        cfg.input = Some(p.clone());
    }
    if let Some(e) = &a.estimator {
        cfg.estimator = e.parse()?;
    }
    if let Some(b) = &a.beta {
        cfg.beta = b.clone();
    }
    if let Some(b) = &a.beta_grid {
        cfg.beta_grid = b.clone();
    }
    if let Some(h) = &a.horizons {
        cfg.horizons = h.clone();
    }
    if let Some(s) = &a.eval_start {
        cfg.eval_start = Some(s.clone());
    }
    if let Some(w) = a.warm_start {
        cfg.warm_start = w;
    }
    if let Some(n) = a.n_theta {
        cfg.n_theta = n;
    }
    if let Some(c) = a.inner_cap {
        cfg.inner_cap = Some(c);
    }
    if let Some(n) = a.n_paths {
        cfg.n_paths = n;
    }
    if let Some(l) = a.fixed_lag {
        cfg.fixed_lag = Some(l);
    }
    if cfg.beta.is_empty() || cfg.beta.iter().any(|b| !(*b >= 0.0 && *b <= 1.0)) {
        return Err(CliError::Config("beta values must lie in [0, 1]".into()));
    }
    if cfg.horizons.is_empty() || cfg.horizons.contains(&0) {
        return Err(CliError::Config("horizons must be positive".into()));
    }
    Ok(cfg)
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("rmd: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Config(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Simulate(a) => cmd_simulate(&simulate_config(a)?),
        Command::Fit(a) => cmd_fit(&run_config(a)?),
        Command::Forecast(a) => cmd_forecast(&run_config(a)?),
        Command::Evaluate(a) => cmd_evaluate(&run_config(a)?),
        Command::SelectBeta(a) => cmd_select_beta(&run_config(a)?),
    })
}

fn create(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_csv<S: Serialize>(dir: &Path, name: &str, rows: impl IntoIterator<Item = S>) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(dir, name)?);
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn default_theta(tag: FamilyTag) -> Vec<f64> {
    match tag {
        FamilyTag::Uc => vec![0.35, 0.5],
        FamilyTag::Ar => vec![0.35, 0.5, 2.0, 0.9],
        FamilyTag::Armf => vec![0.35, 0.5, 0.9],
        FamilyTag::UcT => vec![0.35, 0.5, 8.0],
    }
}

pub fn cmd_simulate(cfg: &RunConfig) -> CliResult<()> {
    let seed = cfg.seed()?;
    let family = cfg.family();
    let s = &cfg.simulate;
    let theta = s.theta.clone().unwrap_or_else(|| default_theta(cfg.model));
    let inst = family.instantiate(&theta)?;
    // Start the state at the long-run mean when there is one.
    let init = if inst.dynamics.state_coef < 1.0 {
        inst.dynamics.state_const / (1.0 - inst.dynamics.state_coef)
    } else {
        crate::models::INFLATION_TARGET
    };
    let model = inst.dynamics.with_init(init, 0.0);
    let spec = ContaminationSpec {
        rate: s.rate,
        mechanism: s.mechanism,
        magnitude: s.magnitude,
        seed,
    };
    let data = simulate_contaminated(&model, s.len, &spec, s.start)?;
    let mut w = create(&cfg.out_dir, "series.csv")?;
    write_series_csv(&data.series, &mut w)?;
    w.flush()?;
    #[derive(Serialize)]
    struct TruthFile<'a> {
        model: FamilyTag,
        theta: &'a [f64],
        truth: &'a crate::data::Truth,
    }
    write_json(
        &cfg.out_dir,
        "truth.json",
        &TruthFile {
            model: cfg.model,
            theta: &theta,
            truth: &data.truth,
        },
    )
}

#[derive(Debug, Serialize)]
struct ParamSummary {
    name: &'static str,
    q025: f64,
    q50: f64,
    q975: f64,
    mean: f64,
    /// RMD-X aggregate or plain MLE.
    #[serde(skip_serializing_if = "Option::is_none")]
    estimate: Option<f64>,
}

#[derive(Debug, Serialize)]
struct FitBlock {
    beta: f64,
    params: Vec<ParamSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    log_evidence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    loglik: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_paths: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_failed_paths: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_rejuvenations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    acceptance_rate: Option<f64>,
}

#[derive(Debug, Serialize)]
struct FitFile {
    model: FamilyTag,
    estimator: &'static str,
    seed: u64,
    n_obs: usize,
    first: Quarter,
    last: Quarter,
    blocks: Vec<FitBlock>,
}

#[derive(Debug, Serialize)]
struct FilteredRow {
    date: Quarter,
    beta: f64,
    observed: f64,
    filtered_mean: f64,
}

#[derive(Debug, Serialize)]
struct InclusionRow {
    date: Quarter,
    beta: f64,
    observed: f64,
    inclusion_prob: f64,
}

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summaries_from_draws(family: &ModelFamily, draws: &[Vec<f64>], estimate: Option<&[f64]>) -> Vec<ParamSummary> {
    family
        .param_names()
        .iter()
        .enumerate()
        .map(|(j, &name)| {
            let mut v: Vec<f64> = draws.iter().map(|d| d[j]).collect();
            v.sort_by(f64::total_cmp);
            ParamSummary {
                name,
                q025: quantile(&v, 0.025),
                q50: quantile(&v, 0.5),
                q975: quantile(&v, 0.975),
                mean: v.iter().sum::<f64>() / v.len() as f64,
                estimate: estimate.map(|e| e[j]),
            }
        })
        .collect()
}

pub fn cmd_fit(cfg: &RunConfig) -> CliResult<()> {
    let seed = cfg.seed()?;
    let series = cfg.input_series()?;
    let family = cfg.family();
    let betas: Vec<f64> = if cfg.estimator == Estimator::None { vec![1.0] } else { cfg.beta.clone() };
    let mut blocks = Vec::new();
    let mut filtered = Vec::new();
    let mut inclusion = Vec::new();
    let dates = series.index();
    let values = series.values();
    for &beta in &betas {
        let (block, means) = match cfg.estimator {
            Estimator::RmdN => {
                let fit = fit_rmd_n(&family, &series, beta, &cfg.rmdn())?;
                let q = fit.system.posterior_quantiles(&[0.025, 0.5, 0.975]);
                let mean = fit.system.posterior_mean();
                let params = family
                    .param_names()
                    .iter()
                    .enumerate()
                    .map(|(j, &name)| ParamSummary {
                        name,
                        q025: q[j][0],
                        q50: q[j][1],
                        q975: q[j][2],
                        mean: mean[j],
                        estimate: None,
                    })
                    .collect();
                for (t, p) in fit.smoothed.probs.iter().enumerate() {
                    inclusion.push(InclusionRow {
                        date: dates[t],
                        beta,
                        observed: values[t],
                        inclusion_prob: *p,
                    });
                }
                let block = FitBlock {
                    beta,
                    params,
                    log_evidence: Some(fit.system.log_evidence),
                    loglik: None,
                    n_paths: None,
                    n_failed_paths: None,
                    n_rejuvenations: Some(fit.system.n_rejuvenations()),
                    acceptance_rate: fit.system.acceptance_rate(),
                };
                (block, fit.filtered_means)
            }
            Estimator::RmdX => {
                let xcfg = RmdxConfig {
                    keep_per_path: true,
                    ..cfg.rmdx(beta)
                };
                let res = rmd_x_estimate(&family, &series, &xcfg)?;
                let draws: Vec<Vec<f64>> = match &res.per_path {
                    Some(p) => p.iter().map(|e| e.theta.clone()).collect(),
                    None => vec![res.theta_bar.clone()],
                };
                let block = FitBlock {
                    beta,
                    params: summaries_from_draws(&family, &draws, Some(&res.theta_bar)),
                    log_evidence: None,
                    loglik: None,
                    n_paths: Some(res.n_paths),
                    n_failed_paths: Some(res.n_failed),
                    n_rejuvenations: None,
                    acceptance_rate: None,
                };
                (block, res.x_bar)
            }
            Estimator::None => {
                let path = InclusionPath::all(series.len());
                let fit = mle_fit(&family, &series, &path, &cfg.rmdx(1.0).mle)?;
                let means = fit.model.filter(values, &path)?.means();
                let block = FitBlock {
                    beta,
                    params: summaries_from_draws(&family, std::slice::from_ref(&fit.theta), Some(&fit.theta)),
                    log_evidence: None,
                    loglik: Some(fit.loglik),
                    n_paths: None,
                    n_failed_paths: None,
                    n_rejuvenations: None,
                    acceptance_rate: None,
                };
                (block, means)
            }
        };
        for (t, m) in means.iter().enumerate() {
            filtered.push(FilteredRow {
                date: dates[t],
                beta,
                observed: values[t],
                filtered_mean: *m,
            });
        }
        blocks.push(block);
    }
    let file = FitFile {
        model: cfg.model,
        estimator: cfg.estimator.as_str(),
        seed,
        n_obs: series.len(),
        first: dates[0],
        last: dates[dates.len() - 1],
        blocks,
    };
    write_json(&cfg.out_dir, "fit.json", &file)?;
    write_csv(&cfg.out_dir, "filtered_means.csv", filtered)?;
    if cfg.estimator == Estimator::RmdN {
        write_csv(&cfg.out_dir, "smoothed_inclusion.csv", inclusion)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ForecastRow {
    origin: Quarter,
    beta: f64,
    horizon: usize,
    mean: f64,
    sd: f64,
}

pub fn cmd_forecast(cfg: &RunConfig) -> CliResult<()> {
    cfg.seed()?;
    let series = cfg.input_series()?;
    let family = cfg.family();
    let origin = series.index()[series.len() - 1];
    let betas: Vec<f64> = if cfg.estimator == Estimator::None { vec![1.0] } else { cfg.beta.clone() };
    let mut rows = Vec::new();
    for &beta in &betas {
        let moments: Vec<(usize, f64, f64)> = match cfg.estimator {
            Estimator::RmdN => {
                let rcfg = RmdnConfig {
                    horizons: cfg.horizons.clone(),
                    forecast_start: series.len(),
                    ..cfg.rmdn()
                };
                let fit = fit_rmd_n(&family, &series, beta, &rcfg)?;
                fit.forecasts.iter().map(|f| (f.horizon, f.mean, f.var)).collect()
            }
            Estimator::RmdX => {
                let res = rmd_x_estimate(&family, &series, &cfg.rmdx(beta))?;
                cfg.horizons
                    .iter()
                    .map(|&h| {
                        let m = &res.forecast_mixture[h - 1];
                        (h, m.mean(), m.variance())
                    })
                    .collect()
            }
            Estimator::None => {
                let path = InclusionPath::all(series.len());
                let fit = mle_fit(&family, &series, &path, &cfg.rmdx(1.0).mle)?;
                let last = fit.model.filter(series.values(), &path)?.last();
                cfg.horizons
                    .iter()
                    .map(|&h| {
                        let p = AverageCoefficients::new(&fit.model.dynamics, h).apply(last);
                        (h, p.mean, p.var)
                    })
                    .collect()
            }
        };
        for (horizon, mean, var) in moments {
            rows.push(ForecastRow {
                origin,
                beta,
                horizon,
                mean,
                sd: var.sqrt(),
            });
        }
    }
    write_csv(&cfg.out_dir, "forecast.csv", rows)
}

fn eval_config(cfg: &RunConfig, series: &TimeSeries) -> CliResult<EvalConfig> {
    Ok(EvalConfig {
        grid: cfg.beta_grid.clone(),
        horizons: cfg.horizons.clone(),
        eval_start: cfg.eval_start(series)?,
        warm_start: cfg.warm_start,
        rmdx: cfg.rmdx(1.0),
        rmdn: cfg.rmdn(),
    })
}

fn evaluation(cfg: &RunConfig) -> CliResult<(TimeSeries, EvalOutput)> {
    cfg.seed()?;
    let series = cfg.input_series()?;
    let ecfg = eval_config(cfg, &series)?;
    let out = run_recursive_evaluation(&series, &cfg.family(), cfg.estimator, &ecfg)?;
    Ok((series, out))
}

#[derive(Debug, Serialize)]
struct MsfeRow<'a> {
    strategy: &'a str,
    horizon: usize,
    msfe: f64,
}

#[derive(Debug, Serialize)]
struct ScheduleRow {
    date: Quarter,
    strategy: String,
    beta: f64,
}

#[derive(Debug, Serialize)]
struct RecordRow {
    beta: f64,
    origin: Quarter,
    horizon: usize,
    point: f64,
    realized: f64,
    log_density: f64,
}

pub fn cmd_evaluate(cfg: &RunConfig) -> CliResult<()> {
    let (series, out) = evaluation(cfg)?;
    let dates = series.index();
    let values = series.values();
    let dir = &cfg.out_dir;
    out.report.write_csv(create(dir, "report.csv")?)?;
    write_json(dir, "report.json", &out.report)?;
    write_csv(
        dir,
        "msfe_by_strategy.csv",
        out.report.rows.iter().map(|r| MsfeRow {
            strategy: &r.beta_strategy,
            horizon: r.horizon,
            msfe: r.msfe,
        }),
    )?;
    write_csv(
        dir,
        "beta_schedule.csv",
        out.schedule.iter().map(|s| ScheduleRow {
            date: dates[s.origin],
            strategy: crate::eval::strategy_name(s.strategy_horizon),
            beta: s.beta,
        }),
    )?;
    write_csv(
        dir,
        "forecast_records.csv",
        out.records.iter().flat_map(|(beta, recs)| {
            recs.iter().map(move |r| RecordRow {
                beta: *beta,
                origin: dates[r.origin],
                horizon: r.horizon,
                point: r.point,
                realized: r.realized,
                log_density: r.log_density,
            })
        }),
    )?;
    write_csv(
        dir,
        "filtered_means.csv",
        out.full_sample.iter().flat_map(|f| {
            f.filtered_means.iter().enumerate().map(move |(t, m)| FilteredRow {
                date: dates[t],
                beta: f.beta,
                observed: values[t],
                filtered_mean: *m,
            })
        }),
    )?;
    if cfg.estimator == Estimator::RmdN {
        write_csv(
            dir,
            "smoothed_inclusion.csv",
            out.full_sample.iter().flat_map(|f| {
                f.smoothed_inclusion.iter().flatten().enumerate().map(move |(t, p)| InclusionRow {
                    date: dates[t],
                    beta: f.beta,
                    observed: values[t],
                    inclusion_prob: *p,
                })
            }),
        )?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct BetaMsfeRow {
    beta: f64,
    horizon: usize,
    msfe: f64,
    n_forecasts: usize,
}

#[derive(Debug, Serialize)]
struct Selection {
    strategy: String,
    horizon: usize,
    beta: f64,
}

pub fn cmd_select_beta(cfg: &RunConfig) -> CliResult<()> {
    let (series, out) = evaluation(cfg)?;
    let decision = series.len() - 1;
    let history: Vec<(f64, &[crate::eval::ForecastRecord])> =
        out.records.iter().map(|(b, r)| (*b, r.as_slice())).collect();
    let mut table = Vec::new();
    for (beta, recs) in &out.records {
        for &h in &cfg.horizons {
            let rs: Vec<_> = recs.iter().filter(|r| r.horizon == h).copied().collect();
            if let Ok(m) = msfe(&rs, h) {
                table.push(BetaMsfeRow {
                    beta: *beta,
                    horizon: h,
                    msfe: m,
                    n_forecasts: rs.len(),
                });
            }
        }
    }
    let selections: Vec<Selection> = cfg
        .horizons
        .iter()
        .map(|&h| Selection {
            strategy: crate::eval::strategy_name(h),
            horizon: h,
            beta: select_beta(&history, h, decision, cfg.warm_start),
        })
        .collect();
    write_csv(&cfg.out_dir, "msfe_by_beta.csv", table)?;
    write_json(&cfg.out_dir, "selected_beta.json", &selections)
}
