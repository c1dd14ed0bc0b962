//! Endogenous randomization.
//!
//! The posterior over (x_t, theta, C^t) is tracked by a Rao-Blackwellized
//! particle system. Each outer particle carries a parameter value and a
//! Gaussian mixture over the state; every mixture component records the
//! inclusion history C^t that produced it. At each step every component
//! branches into an include branch (Kalman update, weight proportional to
//! `beta * f(y | component) / F(y)`) and an exclude branch (prediction only,
//! weight proportional to `1 - beta`), where F is the system one-step
//! predictive density. Parameters are learned by iterated batch importance
//! sampling with random-walk Metropolis rejuvenation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, RmdError};
use crate::models::{ModelFamily, ModelInstance, DIFFUSE_INIT_VAR};
use crate::rng::{stream, Purpose, StreamRng};
use crate::statespace::forecast::{log_sum_exp_slice, AverageCoefficients};
use crate::statespace::kalman::{normal_logpdf, GaussianBelief, LinearGaussianModel, VARIANCE_FLOOR};
use crate::statespace::TimeSeries;

pub const DEFAULT_N_THETA: usize = 512;
pub const DEFAULT_INNER_CAP: usize = 64;
pub const DEFAULT_FIXED_LAG: usize = 40;

/// Unconstrained proposals outside this box are rejected.
const MAX_ABS_COORD: f64 = 40.0;

/// Filtered inclusion probability implied by the mixture update when the
/// contaminating density at y is `f_j` and the system predictive is `big_f`.
pub fn beta_hat(beta: f64, big_f: f64, f_j: f64) -> f64 {
    let num = beta * big_f;
    num / (num + (1.0 - beta) * f_j)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase", tag = "kind", content = "theta")]
pub enum ThetaPrior {
    /// The family's weakly informative prior.
    #[default]
    Default,
    /// Point mass at the given natural parameters; disables rejuvenation.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Smoother {
    /// Weighted ancestry frequencies at the final time.
    #[default]
    Ancestry,
    /// Probability for time t read from the ancestry at time t + lag.
    FixedLag(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RmdnConfig {
    pub n_theta: usize,
    /// Maximum number of inner components per particle; `None` never resamples.
    pub inner_cap: Option<usize>,
    pub ess_threshold: f64,
    pub mh_steps: usize,
    /// Proposal covariance is this multiple of the weighted particle covariance.
    pub proposal_scale: f64,
    pub prior: ThetaPrior,
    pub smoother: Smoother,
    pub seed: u64,
    /// Horizons of the h-average forecasts recorded during filtering.
    pub horizons: Vec<usize>,
    /// Forecasts are recorded once this many observations have been seen.
    pub forecast_start: usize,
}

impl Default for RmdnConfig {
    fn default() -> Self {
        Self {
            n_theta: DEFAULT_N_THETA,
            inner_cap: Some(DEFAULT_INNER_CAP),
            ess_threshold: 0.5,
            mh_steps: 3,
            proposal_scale: 0.5,
            prior: ThetaPrior::Default,
            smoother: Smoother::Ancestry,
            seed: 0,
            horizons: Vec::new(),
            forecast_start: 1,
        }
    }
}

impl RmdnConfig {
    fn validate(&self) -> Result<()> {
        if self.n_theta == 0 {
            return invalid("n_theta must be at least 1");
        }
        if self.inner_cap == Some(0) {
            return invalid("inner component cap must be at least 1");
        }
        if !(self.ess_threshold > 0.0 && self.ess_threshold <= 1.0) {
            return invalid("ess_threshold must lie in (0, 1]");
        }
        if !(self.proposal_scale > 0.0 && self.proposal_scale.is_finite()) {
            return invalid("proposal_scale must be positive");
        }
        if self.horizons.contains(&0) {
            return invalid("forecast horizons must be at least 1");
        }
        Ok(())
    }
}

/// Gaussian mixture over the state with per-component inclusion history.
#[derive(Debug, Clone)]
struct InnerMixture {
    mean: Vec<f64>,
    var: Vec<f64>,
    /// Normalized log weights.
    logw: Vec<f64>,
    /// Row-major bitsets, `words` u64 per component; bit t set when y_t was included.
    anc: Vec<u64>,
    words: usize,
    len: usize,
    /// log(w_j) + log N(y; predicted, P + r_j) per component and measurement node.
    lik: Vec<f64>,
}

enum Branch {
    Exclude,
    Include(usize),
}

impl InnerMixture {
    fn single(belief: GaussianBelief, horizon: usize) -> Self {
        let words = horizon.div_ceil(64).max(1);
        Self {
            mean: vec![belief.mean],
            var: vec![belief.var],
            logw: vec![0.0],
            anc: vec![0; words],
            words,
            len: 0,
            lik: Vec::new(),
        }
    }

    fn from_components(components: &[(f64, GaussianBelief)], horizon: usize) -> Result<Self> {
        if components.is_empty() {
            return invalid("a particle needs at least one state component");
        }
        let total: f64 = components.iter().map(|c| c.0).sum();
        if components.iter().any(|c| !(c.0 >= 0.0 && c.0.is_finite())) || !(total > 0.0) {
            return invalid("component weights must be nonnegative with positive sum");
        }
        for (_, b) in components {
            b.validate()?;
        }
        let words = horizon.div_ceil(64).max(1);
        Ok(Self {
            mean: components.iter().map(|c| c.1.mean).collect(),
            var: components.iter().map(|c| c.1.var).collect(),
            logw: components.iter().map(|c| (c.0 / total).ln()).collect(),
            anc: vec![0; words * components.len()],
            words,
            len: 0,
            lik: Vec::new(),
        })
    }

    fn n(&self) -> usize {
        self.mean.len()
    }

    fn included(&self, c: usize, t: usize) -> bool {
        self.anc[c * self.words + t / 64] >> (t % 64) & 1 == 1
    }

    /// Log predictive density of y without modifying the mixture.
    fn log_predictive(&self, dynamics: &LinearGaussianModel, obs: &[(f64, f64)], y: f64) -> f64 {
        let mut terms = Vec::with_capacity(self.n() * obs.len());
        for c in 0..self.n() {
            let p = dynamics.predict(GaussianBelief {
                mean: self.mean[c],
                var: self.var[c],
            });
            for &(lw, r) in obs {
                terms.push(self.logw[c] + lw + normal_logpdf(y, p.mean, (p.var + r).max(VARIANCE_FLOOR)));
            }
        }
        log_sum_exp_slice(&terms)
    }

    /// Time-advance every component and score y. Returns log p(y | theta, past).
    fn predict_and_score(&mut self, dynamics: &LinearGaussianModel, obs: &[(f64, f64)], y: f64) -> f64 {
        let j = obs.len();
        self.lik.resize(self.n() * j, 0.0);
        let mut terms = Vec::with_capacity(self.n() * j);
        for c in 0..self.n() {
            let p = dynamics.predict(GaussianBelief {
                mean: self.mean[c],
                var: self.var[c],
            });
            self.mean[c] = p.mean;
            self.var[c] = p.var;
            for (k, &(lw, r)) in obs.iter().enumerate() {
                let l = lw + normal_logpdf(y, p.mean, (p.var + r).max(VARIANCE_FLOOR));
                self.lik[c * j + k] = l;
                terms.push(self.logw[c] + l);
            }
        }
        log_sum_exp_slice(&terms)
    }

    /// Branch the predicted components on inclusion of y and resample down to
    /// `cap`. Returns log(beta * p / F + 1 - beta).
    #[allow(clippy::too_many_arguments)]
    fn branch(
        &mut self,
        y: f64,
        obs: &[(f64, f64)],
        beta: f64,
        log_f: f64,
        cap: Option<usize>,
        uniform: impl FnOnce() -> f64,
        t: usize,
    ) -> Result<f64> {
        let j = obs.len();
        let include = beta > 0.0 && log_f.is_finite();
        let exclude = beta < 1.0;
        let (lb, l1mb) = (beta.ln(), (1.0 - beta).ln());
        let mut branches: Vec<(usize, Branch, f64)> = Vec::with_capacity(self.n() * (j + 1));
        for c in 0..self.n() {
            if exclude {
                branches.push((c, Branch::Exclude, self.logw[c] + l1mb));
            }
            if include {
                for k in 0..j {
                    let lw = self.logw[c] + lb + self.lik[c * j + k] - log_f;
                    if lw > f64::NEG_INFINITY {
                        branches.push((c, Branch::Include(k), lw));
                    }
                }
            }
        }
        let logws: Vec<f64> = branches.iter().map(|b| b.2).collect();
        let inc = log_sum_exp_slice(&logws);
        if !inc.is_finite() {
            return Err(RmdError::FilterDegeneracy { t });
        }

        let chosen: Vec<(usize, f64)> = match cap {
            Some(cap) if branches.len() > cap => {
                let w: Vec<f64> = logws.iter().map(|l| (l - inc).exp()).collect();
                let lw = -(cap as f64).ln();
                systematic_indices(&w, cap, uniform()).into_iter().map(|i| (i, lw)).collect()
            }
            _ => logws.iter().enumerate().map(|(i, l)| (i, l - inc)).collect(),
        };

        let n = chosen.len();
        let mut mean = Vec::with_capacity(n);
        let mut var = Vec::with_capacity(n);
        let mut logw = Vec::with_capacity(n);
        let mut anc = Vec::with_capacity(n * self.words);
        for (bi, lw) in chosen {
            let (c, ref kind, _) = branches[bi];
            let row = &self.anc[c * self.words..(c + 1) * self.words];
            let start = anc.len();
            anc.extend_from_slice(row);
            match *kind {
                Branch::Exclude => {
                    mean.push(self.mean[c]);
                    var.push(self.var[c]);
                }
                Branch::Include(k) => {
                    let r = obs[k].1;
                    let s = (self.var[c] + r).max(VARIANCE_FLOOR);
                    let gain = self.var[c] / s;
                    mean.push(self.mean[c] + gain * (y - self.mean[c]));
                    var.push(((1.0 - gain) * self.var[c]).max(0.0));
                    anc[start + self.len / 64] |= 1 << (self.len % 64);
                }
            }
            logw.push(lw);
        }
        self.mean = mean;
        self.var = var;
        self.logw = logw;
        self.anc = anc;
        self.len += 1;
        Ok(inc)
    }
}

/// Indices drawn by systematic resampling from normalized weights `w`.
pub(crate) fn systematic_resample<R: Rng + ?Sized>(w: &[f64], m: usize, rng: &mut R) -> Vec<usize> {
    systematic_indices(w, m, rng.random())
}

/// Systematic resampling with the single uniform draw `u` in [0, 1).
fn systematic_indices(w: &[f64], m: usize, u: f64) -> Vec<usize> {
    let total: f64 = w.iter().sum();
    let u0 = u / m as f64;
    let mut out = Vec::with_capacity(m);
    let mut cum = w[0] / total;
    let mut i = 0;
    for k in 0..m {
        let u = u0 + k as f64 / m as f64;
        while u > cum && i + 1 < w.len() {
            i += 1;
            cum += w[i] / total;
        }
        out.push(i);
    }
    out
}

/// Parameter value with its conditional state filter.
#[derive(Debug, Clone)]
pub struct ThetaParticle {
    /// Natural parameters.
    pub theta: Vec<f64>,
    /// Normalized log outer weight.
    pub log_weight: f64,
    /// Running sum of log(beta * p_theta / F + 1 - beta).
    pub loglik: f64,
    z: Vec<f64>,
    model: ModelInstance,
    obs: Vec<(f64, f64)>,
    mix: InnerMixture,
    log_pred: f64,
}

impl ThetaParticle {
    fn new(family: &ModelFamily, theta: Vec<f64>, init_mean: f64, mix: InnerMixture) -> Result<Self> {
        let model = family.instantiate(&theta)?.with_init_mean(init_mean);
        let z = family.to_unconstrained(&theta)?;
        let obs = model.obs_components();
        Ok(Self {
            theta,
            log_weight: 0.0,
            loglik: 0.0,
            z,
            model,
            obs,
            mix,
            log_pred: 0.0,
        })
    }

    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }

    pub fn dynamics(&self) -> &LinearGaussianModel {
        &self.model.dynamics
    }

    /// (normalized weight, filtered belief) of each inner component.
    pub fn components(&self) -> Vec<(f64, GaussianBelief)> {
        (0..self.mix.n())
            .map(|c| {
                (
                    self.mix.logw[c].exp(),
                    GaussianBelief {
                        mean: self.mix.mean[c],
                        var: self.mix.var[c],
                    },
                )
            })
            .collect()
    }

    /// Inclusion history of inner component `c`.
    pub fn ancestry(&self, c: usize) -> Vec<bool> {
        (0..self.mix.len).map(|t| self.mix.included(c, t)).collect()
    }
}

/// Inputs for building a system from explicit particles.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSpec {
    pub theta: Vec<f64>,
    pub weight: f64,
    /// (weight, belief) of the state at the current time.
    pub components: Vec<(f64, GaussianBelief)>,
}

/// One state-mixture component across the whole system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    /// Outer weight times inner weight.
    pub weight: f64,
    pub mean: f64,
    pub var: f64,
    pub ancestry: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedInclusion {
    pub probs: Vec<f64>,
}

/// Moments and realized log score of an h-average forecast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastSummary {
    pub mean: f64,
    pub var: f64,
    pub log_density: Option<f64>,
}

/// Weighted parameter particles with Rao-Blackwellized state mixtures.
#[derive(Debug, Clone)]
pub struct ThetaParticleSystem {
    pub family: ModelFamily,
    pub particles: Vec<ThetaParticle>,
    pub beta: f64,
    pub ess_threshold: f64,
    pub rng_seed: u64,
    pub log_evidence: f64,
    inner_cap: Option<usize>,
    mh_steps: usize,
    proposal_scale: f64,
    fixed_theta: bool,
    smoother: Smoother,
    init_mean: f64,
    horizon: usize,
    ys: Vec<f64>,
    log_f: Vec<f64>,
    lagged: Vec<f64>,
    n_rejuvenations: usize,
    n_proposed: usize,
    n_accepted: usize,
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) {
        return invalid(format!("beta must lie in [0, 1], got {beta}"));
    }
    Ok(())
}

impl ThetaParticleSystem {
    /// Draw `cfg.n_theta` particles from the prior. Each starts from the
    /// diffuse belief N(init_mean, DIFFUSE_INIT_VAR). `horizon` is the number
    /// of observations that will be processed.
    pub fn new(family: &ModelFamily, beta: f64, cfg: &RmdnConfig, init_mean: f64, horizon: usize) -> Result<Self> {
        family.validate()?;
        check_beta(beta)?;
        cfg.validate()?;
        if horizon == 0 {
            return invalid("at least one observation is required");
        }
        if !init_mean.is_finite() {
            return invalid("initial mean must be finite");
        }
        let belief = GaussianBelief {
            mean: init_mean,
            var: DIFFUSE_INIT_VAR,
        };
        let particles = (0..cfg.n_theta)
            .map(|i| {
                let theta = match &cfg.prior {
                    ThetaPrior::Default => family.sample_prior(&mut stream(cfg.seed, Purpose::PriorDraw, 0, i as u64)),
                    ThetaPrior::Fixed(theta) => theta.clone(),
                };
                let mut p = ThetaParticle::new(family, theta, init_mean, InnerMixture::single(belief, horizon))?;
                p.log_weight = -(cfg.n_theta as f64).ln();
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::assemble(family, beta, cfg, particles, init_mean, horizon))
    }

    /// Build a system from explicit particles and state mixtures, as if
    /// filtering were about to start. Weights are normalized.
    pub fn from_particles(
        family: &ModelFamily,
        beta: f64,
        cfg: &RmdnConfig,
        specs: Vec<ParticleSpec>,
        horizon: usize,
    ) -> Result<Self> {
        family.validate()?;
        check_beta(beta)?;
        cfg.validate()?;
        if specs.is_empty() {
            return invalid("at least one particle is required");
        }
        if horizon == 0 {
            return invalid("at least one observation is required");
        }
        let total: f64 = specs.iter().map(|s| s.weight).sum();
        if specs.iter().any(|s| !(s.weight >= 0.0 && s.weight.is_finite())) || !(total > 0.0) {
            return invalid("particle weights must be nonnegative with positive sum");
        }
        let particles = specs
            .into_iter()
            .map(|s| {
                let mix = InnerMixture::from_components(&s.components, horizon)?;
                let mut p = ThetaParticle::new(family, s.theta, 0.0, mix)?;
                p.log_weight = (s.weight / total).ln();
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::assemble(family, beta, cfg, particles, 0.0, horizon))
    }

    fn assemble(
        family: &ModelFamily,
        beta: f64,
        cfg: &RmdnConfig,
        particles: Vec<ThetaParticle>,
        init_mean: f64,
        horizon: usize,
    ) -> Self {
        Self {
            family: *family,
            particles,
            beta,
            ess_threshold: cfg.ess_threshold,
            rng_seed: cfg.seed,
            log_evidence: 0.0,
            inner_cap: cfg.inner_cap,
            mh_steps: cfg.mh_steps,
            proposal_scale: cfg.proposal_scale,
            fixed_theta: matches!(cfg.prior, ThetaPrior::Fixed(_)),
            smoother: cfg.smoother,
            init_mean,
            horizon,
            ys: Vec::new(),
            log_f: Vec::new(),
            lagged: Vec::new(),
            n_rejuvenations: 0,
            n_proposed: 0,
            n_accepted: 0,
        }
    }

    /// Number of observations processed so far.
    pub fn time(&self) -> usize {
        self.ys.len()
    }

    pub fn is_complete(&self) -> bool {
        self.ys.len() == self.horizon
    }

    /// Log of the system predictive density F at each processed time.
    pub fn log_predictive_history(&self) -> &[f64] {
        &self.log_f
    }

    pub fn n_rejuvenations(&self) -> usize {
        self.n_rejuvenations
    }

    /// Fraction of Metropolis proposals accepted so far.
    pub fn acceptance_rate(&self) -> Option<f64> {
        (self.n_proposed > 0).then(|| self.n_accepted as f64 / self.n_proposed as f64)
    }

    pub fn ess(&self) -> f64 {
        1.0 / self.particles.iter().map(|p| p.weight().powi(2)).sum::<f64>()
    }

    /// log F(y | past), the weighted one-step predictive density.
    pub fn log_predictive_density(&self, y: f64) -> Result<f64> {
        if !y.is_finite() {
            return invalid("observation must be finite");
        }
        let terms: Vec<f64> = self
            .particles
            .iter()
            .map(|p| p.log_weight + p.mix.log_predictive(&p.model.dynamics, &p.obs, y))
            .collect();
        Ok(log_sum_exp_slice(&terms))
    }

    pub fn predictive_density(&self, y: f64) -> Result<f64> {
        Ok(self.log_predictive_density(y)?.exp())
    }

    /// Assimilate one observation (no rejuvenation).
    pub fn rmd_n_update(&mut self, y: f64) -> Result<()> {
        if !y.is_finite() {
            return invalid("observation must be finite");
        }
        let t = self.time();
        if t >= self.horizon {
            return Err(RmdError::InvalidState(format!("all {} observations already processed", self.horizon)));
        }
        self.particles.par_iter_mut().for_each(|p| {
            p.log_pred = p.mix.predict_and_score(&p.model.dynamics, &p.obs, y);
        });
        let terms: Vec<f64> = self.particles.iter().map(|p| p.log_weight + p.log_pred).collect();
        let log_f = log_sum_exp_slice(&terms);
        if self.beta > 0.0 && !log_f.is_finite() {
            return Err(RmdError::FilterDegeneracy { t });
        }
        let (beta, cap, seed) = (self.beta, self.inner_cap, self.rng_seed);
        self.particles
            .par_iter_mut()
            .enumerate()
            .map(|(i, p)| {
                let inc = p.mix.branch(
                    y,
                    &p.obs,
                    beta,
                    log_f,
                    cap,
                    || stream(seed, Purpose::InnerResample, t as u64, i as u64).random(),
                    t,
                )?;
                p.log_weight += inc;
                p.loglik += inc;
                Ok(())
            })
            .collect::<Result<Vec<()>>>()?;
        self.normalize_outer(t)?;
        self.log_evidence += if beta == 0.0 {
            0.0
        } else if beta == 1.0 {
            log_f
        } else {
            log_sum_exp_slice(&[beta.ln() + log_f, (1.0 - beta).ln()])
        };
        self.ys.push(y);
        self.log_f.push(log_f);
        if let Smoother::FixedLag(lag) = self.smoother {
            if t >= lag {
                let p = self.inclusion_probability(t - lag);
                self.lagged.push(p);
            }
        }
        Ok(())
    }

    fn normalize_outer(&mut self, t: usize) -> Result<()> {
        let lws: Vec<f64> = self.particles.iter().map(|p| p.log_weight).collect();
        let total = log_sum_exp_slice(&lws);
        if !total.is_finite() {
            return Err(RmdError::FilterDegeneracy { t });
        }
        for p in &mut self.particles {
            p.log_weight -= total;
        }
        Ok(())
    }

    /// Resample and rejuvenate when the outer ESS drops below the threshold.
    /// Returns whether a rejuvenation took place.
    pub fn maybe_rejuvenate(&mut self) -> Result<bool> {
        let n = self.particles.len();
        if self.ess() >= self.ess_threshold * n as f64 {
            return Ok(false);
        }
        let epoch = self.n_rejuvenations as u64;
        self.n_rejuvenations += 1;
        let chol = self.proposal_factor();

        let w: Vec<f64> = self.particles.iter().map(|p| p.weight()).collect();
        let mut rng = stream(self.rng_seed, Purpose::OuterResample, epoch, 0);
        let idx = systematic_resample(&w, n, &mut rng);
        let lw = -(n as f64).ln();
        self.particles = idx
            .into_iter()
            .map(|i| {
                let mut p = self.particles[i].clone();
                p.log_weight = lw;
                p
            })
            .collect();

        let Some(chol) = chol else {
            return Ok(true);
        };
        let seed = self.rng_seed;
        let ctx = MoveContext {
            family: &self.family,
            beta: self.beta,
            cap: self.inner_cap,
            ys: &self.ys,
            log_f: &self.log_f,
            init_mean: self.init_mean,
            horizon: self.horizon,
            chol: &chol,
        };
        let steps = self.mh_steps;
        let accepted: usize = self
            .particles
            .par_iter_mut()
            .enumerate()
            .map(|(i, p)| {
                let mut rng = stream(seed, Purpose::Rejuvenate, epoch, i as u64);
                (0..steps).filter(|_| ctx.metropolis_step(p, &mut rng)).count()
            })
            .sum();
        self.n_proposed += steps * n;
        self.n_accepted += accepted;
        let t = self.time();
        if self.ess() < 1.0 - 1e-9 || self.particles.iter().any(|p| !p.log_weight.is_finite()) {
            return Err(RmdError::EstimationFailure(format!("particle system collapsed at t = {t}")));
        }
        Ok(true)
    }

    /// Cholesky factor of the random-walk proposal covariance, or `None` when
    /// parameters are fixed.
    fn proposal_factor(&self) -> Option<DMatrix<f64>> {
        let d = self.family.free_dim();
        if self.fixed_theta || self.mh_steps == 0 || d == 0 {
            return None;
        }
        let mut mean = DVector::<f64>::zeros(d);
        for p in &self.particles {
            mean += DVector::from_column_slice(&p.z) * p.weight();
        }
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for p in &self.particles {
            let dz = DVector::from_column_slice(&p.z) - &mean;
            cov += &dz * dz.transpose() * p.weight();
        }
        cov *= self.proposal_scale;
        for k in 0..d {
            cov[(k, k)] += 1e-8;
        }
        match cov.clone().cholesky() {
            Some(c) => Some(c.l()),
            None => Some(DMatrix::from_diagonal(&cov.diagonal().map(|v| v.max(1e-8).sqrt()))),
        }
    }

    /// Weighted probability that y_t was included, from current ancestry.
    fn inclusion_probability(&self, t: usize) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for p in &self.particles {
            for c in 0..p.mix.n() {
                let w = (p.log_weight + p.mix.logw[c]).exp();
                den += w;
                if p.mix.included(c, t) {
                    num += w;
                }
            }
        }
        (num / den).clamp(0.0, 1.0)
    }

    /// Smoothed inclusion probabilities P(C_t = 1 | y^T). Requires all
    /// observations to have been processed.
    pub fn smoothed_inclusion(&self) -> Result<SmoothedInclusion> {
        if !self.is_complete() {
            return Err(RmdError::InvalidState(format!(
                "smoothing needs all {} observations, {} processed",
                self.horizon,
                self.time()
            )));
        }
        let len = self.horizon;
        let probs = match self.smoother {
            Smoother::Ancestry => (0..len).map(|t| self.inclusion_probability(t)).collect(),
            Smoother::FixedLag(_) => {
                let k = self.lagged.len();
                self.lagged
                    .iter()
                    .copied()
                    .chain((k..len).map(|t| self.inclusion_probability(t)))
                    .collect()
            }
        };
        Ok(SmoothedInclusion { probs })
    }

    /// Weighted mean of the filtered state.
    pub fn filtered_mean(&self) -> f64 {
        self.particles
            .iter()
            .map(|p| {
                let w = p.weight();
                (0..p.mix.n()).map(|c| w * p.mix.logw[c].exp() * p.mix.mean[c]).sum::<f64>()
            })
            .sum()
    }

    /// Every state component with its combined weight and ancestry.
    pub fn state_mixture(&self) -> Vec<MixtureComponent> {
        self.particles
            .iter()
            .flat_map(|p| {
                (0..p.mix.n()).map(move |c| MixtureComponent {
                    weight: (p.log_weight + p.mix.logw[c]).exp(),
                    mean: p.mix.mean[c],
                    var: p.mix.var[c],
                    ancestry: (0..p.mix.len).map(|t| p.mix.included(c, t)).collect(),
                })
            })
            .collect()
    }

    /// Weighted quantiles of each natural parameter; result is indexed
    /// `[param][quantile]`.
    pub fn posterior_quantiles(&self, probs: &[f64]) -> Vec<Vec<f64>> {
        let dim = self.particles[0].theta.len();
        (0..dim)
            .map(|j| {
                let mut pairs: Vec<(f64, f64)> = self.particles.iter().map(|p| (p.theta[j], p.weight())).collect();
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                let total: f64 = pairs.iter().map(|p| p.1).sum();
                probs
                    .iter()
                    .map(|&q| {
                        let mut cum = 0.0;
                        for &(v, w) in &pairs {
                            cum += w / total;
                            if cum >= q - 1e-12 {
                                return v;
                            }
                        }
                        pairs[pairs.len() - 1].0
                    })
                    .collect()
            })
            .collect()
    }

    pub fn posterior_mean(&self) -> Vec<f64> {
        let dim = self.particles[0].theta.len();
        (0..dim)
            .map(|j| self.particles.iter().map(|p| p.weight() * p.theta[j]).sum())
            .collect()
    }

    /// Mixture forecast of the average of the next `h` observations, with
    /// the log density at `realized` when given.
    pub fn forecast_average(&self, h: usize, realized: Option<f64>) -> Result<ForecastSummary> {
        if h == 0 {
            return invalid("forecast horizon must be at least 1");
        }
        let mut first = 0.0;
        let mut second = 0.0;
        let mut terms = Vec::new();
        for p in &self.particles {
            let coef = AverageCoefficients::new(&p.model.dynamics, h);
            for c in 0..p.mix.n() {
                let lw = p.log_weight + p.mix.logw[c];
                let w = lw.exp();
                let pred = coef.apply(GaussianBelief {
                    mean: p.mix.mean[c],
                    var: p.mix.var[c],
                });
                first += w * pred.mean;
                second += w * (pred.var + pred.mean * pred.mean);
                if let Some(x) = realized {
                    terms.push(lw + normal_logpdf(x, pred.mean, pred.var.max(VARIANCE_FLOOR)));
                }
            }
        }
        Ok(ForecastSummary {
            mean: first,
            var: (second - first * first).max(0.0),
            log_density: realized.map(|_| log_sum_exp_slice(&terms)),
        })
    }
}

/// Shared inputs of a Metropolis move.
struct MoveContext<'a> {
    family: &'a ModelFamily,
    beta: f64,
    cap: Option<usize>,
    ys: &'a [f64],
    log_f: &'a [f64],
    init_mean: f64,
    horizon: usize,
    chol: &'a DMatrix<f64>,
}

impl MoveContext<'_> {
    /// One random-walk Metropolis step on the unconstrained parameters. The
    /// proposal's state filter is rerun over the processed data against the
    /// stored predictive densities.
    fn metropolis_step(&self, p: &mut ThetaParticle, rng: &mut StreamRng) -> bool {
        let d = p.z.len();
        let xi = DVector::<f64>::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let step = self.chol * xi;
        let z: Vec<f64> = p.z.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let log_u = rng.random::<f64>().ln();
        let Some(proposal) = self.rerun(&z, rng) else {
            return false;
        };
        let lp_new = self.family.log_prior_unconstrained(&z);
        let lp_old = self.family.log_prior_unconstrained(&p.z);
        if log_u < lp_new + proposal.loglik - lp_old - p.loglik {
            let log_weight = p.log_weight;
            *p = proposal;
            p.log_weight = log_weight;
            true
        } else {
            false
        }
    }

    fn rerun(&self, z: &[f64], rng: &mut StreamRng) -> Option<ThetaParticle> {
        if z.iter().any(|v| !(v.abs() <= MAX_ABS_COORD)) {
            return None;
        }
        let theta = self.family.from_unconstrained(z);
        let belief = GaussianBelief {
            mean: self.init_mean,
            var: DIFFUSE_INIT_VAR,
        };
        let mut p = ThetaParticle::new(self.family, theta, self.init_mean, InnerMixture::single(belief, self.horizon)).ok()?;
        for (t, (&y, &lf)) in self.ys.iter().zip(self.log_f).enumerate() {
            p.mix.predict_and_score(&p.model.dynamics, &p.obs, y);
            let inc = p.mix.branch(y, &p.obs, self.beta, lf, self.cap, || rng.random(), t).ok()?;
            p.loglik += inc;
        }
        p.loglik.is_finite().then_some(p)
    }
}

/// Forecast recorded during filtering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmdnForecast {
    /// Position of the last observation used.
    pub origin: usize,
    pub horizon: usize,
    pub mean: f64,
    pub var: f64,
    /// Average of the next `horizon` observations, when inside the sample.
    pub realized: Option<f64>,
    pub log_density: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RmdnFit {
    pub system: ThetaParticleSystem,
    pub smoothed: SmoothedInclusion,
    /// Weighted filtered state mean at each time.
    pub filtered_means: Vec<f64>,
    pub forecasts: Vec<RmdnForecast>,
}

/// Mean of `values[origin + 1 ..= origin + h]`, if available.
pub fn realized_average(values: &[f64], origin: usize, h: usize) -> Option<f64> {
    (origin + h < values.len()).then(|| values[origin + 1..=origin + h].iter().sum::<f64>() / h as f64)
}

/// Sequential posterior over parameters, states and inclusion indicators.
///
/// The diffuse initial state is centred on the first observation. Forecasts
/// at origin t use only observations up to t; the realized value is attached
/// for scoring.
pub fn fit_rmd_n(family: &ModelFamily, series: &TimeSeries, beta: f64, cfg: &RmdnConfig) -> Result<RmdnFit> {
    let values = series.values();
    if values.is_empty() {
        return invalid("series is empty");
    }
    let mut system = ThetaParticleSystem::new(family, beta, cfg, values[0], values.len())?;
    let mut filtered_means = Vec::with_capacity(values.len());
    let mut forecasts = Vec::new();
    for (t, &y) in values.iter().enumerate() {
        system.rmd_n_update(y)?;
        system.maybe_rejuvenate()?;
        filtered_means.push(system.filtered_mean());
        if t + 1 >= cfg.forecast_start {
            for &h in &cfg.horizons {
                let realized = realized_average(values, t, h);
                let f = system.forecast_average(h, realized)?;
                forecasts.push(RmdnForecast {
                    origin: t,
                    horizon: h,
                    mean: f.mean,
                    var: f.var,
                    realized,
                    log_density: f.log_density,
                });
            }
        }
    }
    let smoothed = system.smoothed_inclusion()?;
    Ok(RmdnFit {
        system,
        smoothed,
        filtered_means,
        forecasts,
    })
}
