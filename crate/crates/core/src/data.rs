//! Price-index ingestion, inflation transforms and synthetic contaminated data.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{stream, Purpose};
use crate::statespace::{LinearGaussianModel, Quarter, TimeSeries};

/// Quarterly price-index levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceIndexSeries {
    index: Vec<Quarter>,
    level: Vec<f64>,
}

impl PriceIndexSeries {
    pub fn new(index: Vec<Quarter>, level: Vec<f64>) -> Result<Self> {
        if index.len() != level.len() {
            return invalid("index and levels differ in length");
        }
        check_contiguous(&index)?;
        if let Some(t) = level.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return invalid(format!("price level at position {t} is not positive"));
        }
        Ok(Self { index, level })
    }

    pub fn from_levels(start: Quarter, level: Vec<f64>) -> Result<Self> {
        let index = (0..level.len() as i64).map(|i| start.offset(i)).collect();
        Self::new(index, level)
    }

    pub fn index(&self) -> &[Quarter] {
        &self.index
    }

    pub fn levels(&self) -> &[f64] {
        &self.level
    }

    pub fn len(&self) -> usize {
        self.level.len()
    }

    pub fn is_empty(&self) -> bool {
        self.level.is_empty()
    }
}

fn check_contiguous(index: &[Quarter]) -> Result<()> {
    for w in index.windows(2) {
        if w[0].quarters_until(w[1]) != 1 {
            return invalid(format!("quarters {} and {} are not contiguous", w[0], w[1]));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InflationScale {
    /// 400 times the log difference: annualized percent.
    #[default]
    Annualized,
    /// Plain log difference.
    Raw,
}

/// Annualized percent inflation, 400 (ln P_t - ln P_{t-1}), labelled by the later quarter.
pub fn to_inflation(prices: &PriceIndexSeries) -> Result<TimeSeries> {
    to_inflation_with(prices, InflationScale::Annualized)
}

pub fn to_inflation_with(prices: &PriceIndexSeries, scale: InflationScale) -> Result<TimeSeries> {
    if prices.len() < 2 {
        return invalid("at least two price levels are needed");
    }
    let factor = match scale {
        InflationScale::Annualized => 400.0,
        InflationScale::Raw => 1.0,
    };
    let values = prices.level.windows(2).map(|w| factor * (w[1].ln() - w[0].ln())).collect();
    TimeSeries::new(prices.index[1..].to_vec(), values)
}

#[derive(Debug, Deserialize, Serialize)]
struct Row {
    date: Quarter,
    value: f64,
}

fn read_rows<R: Read>(reader: R) -> Result<(Vec<Quarter>, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "date" || &headers[1] != "value" {
        return invalid("CSV header must be `date,value`");
    }
    let mut index = Vec::new();
    let mut values = Vec::new();
    for row in rdr.deserialize::<Row>() {
        let row = row?;
        index.push(row.date);
        values.push(row.value);
    }
    if index.is_empty() {
        return invalid("CSV has no rows");
    }
    check_contiguous(&index)?;
    Ok((index, values))
}

/// Read a `date,value` CSV of observations.
pub fn read_series_csv<R: Read>(reader: R) -> Result<TimeSeries> {
    let (index, values) = read_rows(reader)?;
    TimeSeries::new(index, values)
}

/// Read a `date,value` CSV of price levels.
pub fn read_prices_csv<R: Read>(reader: R) -> Result<PriceIndexSeries> {
    let (index, level) = read_rows(reader)?;
    PriceIndexSeries::new(index, level)
}

pub fn load_series(path: &Path) -> Result<TimeSeries> {
    read_series_csv(std::fs::File::open(path)?)
}

pub fn write_series_csv<W: Write>(series: &TimeSeries, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for (date, value) in series.index().iter().zip(series.values()) {
        w.serialize(Row {
            date: *date,
            value: *value,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContaminationMechanism {
    /// y + s * magnitude * obs_sd with a random sign s.
    #[default]
    AdditiveShift,
    /// Draw from the clean one-step predictive of y given x_{t-1} with its
    /// standard deviation inflated by `magnitude`.
    PredictiveReplacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContaminationSpec {
    pub rate: f64,
    pub mechanism: ContaminationMechanism,
    pub magnitude: f64,
    pub seed: u64,
}

impl Default for ContaminationSpec {
    fn default() -> Self {
        Self {
            rate: 0.0,
            mechanism: ContaminationMechanism::AdditiveShift,
            magnitude: 10.0,
            seed: 0,
        }
    }
}

impl ContaminationSpec {
    pub fn additive(rate: f64, magnitude: f64, seed: u64) -> Self {
        Self {
            rate,
            mechanism: ContaminationMechanism::AdditiveShift,
            magnitude,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rate) {
            return invalid(format!("contamination rate must lie in [0, 1), got {}", self.rate));
        }
        if !(self.magnitude.is_finite() && self.magnitude >= 0.0) {
            return invalid("contamination magnitude must be finite and nonnegative");
        }
        Ok(())
    }
}

/// Ground truth of a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub model: LinearGaussianModel,
    pub contamination: ContaminationSpec,
    /// Latent state x_t.
    pub latent: Vec<f64>,
    /// Clean observations before contamination.
    pub clean: Vec<f64>,
    /// true where the observation is uncontaminated.
    pub inclusion: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedData {
    pub series: TimeSeries,
    pub truth: Truth,
}

/// First quarter of the default simulated sample; 221 quarters run to 2015Q2.
pub const DEFAULT_SIM_START: Quarter = Quarter { year: 1960, q: 2 };
pub const DEFAULT_SIM_LEN: usize = 221;

/// Simulate the state-space model from x_0 = init_mean and contaminate each
/// observation independently with probability `spec.rate`.
pub fn simulate_contaminated(
    model: &LinearGaussianModel,
    len: usize,
    spec: &ContaminationSpec,
    start: Quarter,
) -> Result<SimulatedData> {
    model.validate()?;
    spec.validate()?;
    if len < 2 {
        return invalid("at least two observations are required");
    }
    let mut noise = stream(spec.seed, Purpose::Simulate, 0, 0);
    let mut contam = stream(spec.seed, Purpose::Contaminate, 0, 0);
    let mut latent = Vec::with_capacity(len);
    let mut clean = Vec::with_capacity(len);
    let mut observed = Vec::with_capacity(len);
    let mut inclusion = Vec::with_capacity(len);
    let mut prev = model.init_mean;
    for _ in 0..len {
        let pred = model.state_const + model.state_coef * prev;
        let e: f64 = noise.sample(StandardNormal);
        let u: f64 = noise.sample(StandardNormal);
        let x = pred + model.state_sd * e;
        let y = x + model.obs_sd * u;
        let keep = contam.random::<f64>() >= spec.rate;
        let sign = if contam.random::<bool>() { 1.0 } else { -1.0 };
        let z: f64 = contam.sample(StandardNormal);
        let y_obs = if keep {
            y
        } else {
            match spec.mechanism {
                ContaminationMechanism::AdditiveShift => y + sign * spec.magnitude * model.obs_sd,
                ContaminationMechanism::PredictiveReplacement => {
                    let sd = (model.state_sd.powi(2) + model.obs_sd.powi(2)).sqrt();
                    pred + spec.magnitude * sd * z
                }
            }
        };
        latent.push(x);
        clean.push(y);
        observed.push(y_obs);
        inclusion.push(keep);
        prev = x;
    }
    Ok(SimulatedData {
        series: TimeSeries::from_values(start, observed)?,
        truth: Truth {
            model: *model,
            contamination: *spec,
            latent,
            clean,
            inclusion,
        },
    })
}
