//! Concrete model families for quarterly inflation.
//!
//! * `uc`: local level, x_t = x_{t-1} + e_t, y_t = x_t + u_t.
//! * `ar`: mean reverting, x_t = mu + kappa (x_{t-1} - mu) + e_t.
//! * `armf`: `ar` with mu fixed (2% by default).
//! * `uc-t`: `uc` with scaled Student-t measurement noise of variance obs_sd^2.
//!
//! Here kappa is the persistence coefficient, so kappa -> 1 approaches the
//! random walk of `uc` (where mu is no longer identified). Kappa must lie in
//! [0, 1).

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, RmdError};
use crate::statespace::kalman::{filter_values, update_predicted, FilterOutput, GaussianBelief, LinearGaussianModel, LN_2PI};
use crate::statespace::forecast::log_sum_exp_slice;
use crate::statespace::series::InclusionPath;

/// Inflation target used by `armf` and the naive benchmark.
pub const INFLATION_TARGET: f64 = 2.0;

/// Initial state variance of the diffuse prior (annualized percent scale).
pub const DIFFUSE_INIT_VAR: f64 = 100.0;

/// Number of nodes in the Student-t scale-mixture approximation.
pub const T_MIXTURE_NODES: usize = 10;

const PRIOR_SIGMA_SCALE: f64 = 5.0;
const PRIOR_MU_MEAN: f64 = 2.0;
const PRIOR_MU_SD: f64 = 2.0;
const PRIOR_LOG_DOF_MINUS_2_SD: f64 = 1.0;
const DEFAULT_T_DOF: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FamilyTag {
    #[serde(rename = "uc")]
    Uc,
    #[serde(rename = "ar")]
    Ar,
    #[serde(rename = "armf")]
    Armf,
    #[serde(rename = "uc-t")]
    UcT,
}

impl FamilyTag {
    pub fn as_str(self) -> &'static str {
        match self {
            FamilyTag::Uc => "uc",
            FamilyTag::Ar => "ar",
            FamilyTag::Armf => "armf",
            FamilyTag::UcT => "uc-t",
        }
    }
}

impl fmt::Display for FamilyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FamilyTag {
    type Err = RmdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uc" => Ok(FamilyTag::Uc),
            "ar" => Ok(FamilyTag::Ar),
            "armf" => Ok(FamilyTag::Armf),
            "uc-t" => Ok(FamilyTag::UcT),
            other => invalid(format!("unknown model family {other:?} (expected uc, ar, armf, uc-t)")),
        }
    }
}

/// A model family plus its fixed hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelFamily {
    pub tag: FamilyTag,
    /// Long-run mean for `armf`.
    pub fixed_mu: Option<f64>,
    /// Degrees of freedom for `uc-t`: the starting value when estimated,
    /// otherwise the fixed value.
    pub t_dof: Option<f64>,
    /// Whether `uc-t` estimates its degrees of freedom.
    #[serde(default = "default_true")]
    pub estimate_dof: bool,
}

fn default_true() -> bool {
    true
}

impl ModelFamily {
    pub fn uc() -> Self {
        Self::from_tag(FamilyTag::Uc)
    }

    pub fn ar() -> Self {
        Self::from_tag(FamilyTag::Ar)
    }

    pub fn armf() -> Self {
        Self::from_tag(FamilyTag::Armf)
    }

    pub fn uc_t(dof: f64) -> Self {
        Self {
            t_dof: Some(dof),
            ..Self::from_tag(FamilyTag::UcT)
        }
    }

    /// Family with default hyperparameters for the tag.
    pub fn from_tag(tag: FamilyTag) -> Self {
        Self {
            tag,
            fixed_mu: (tag == FamilyTag::Armf).then_some(INFLATION_TARGET),
            t_dof: (tag == FamilyTag::UcT).then_some(DEFAULT_T_DOF),
            estimate_dof: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.tag {
            FamilyTag::Armf if self.fixed_mu.is_none_or(|m| !m.is_finite()) => {
                invalid("armf requires a finite fixed_mu")
            }
            FamilyTag::UcT if self.t_dof.is_none_or(|v| !(v > 2.0 && v.is_finite())) => {
                invalid("uc-t requires t_dof > 2")
            }
            _ => Ok(()),
        }
    }

    /// Length of the natural parameter vector.
    pub fn theta_dim(&self) -> usize {
        match self.tag {
            FamilyTag::Uc => 2,
            FamilyTag::Ar => 4,
            FamilyTag::Armf | FamilyTag::UcT => 3,
        }
    }

    /// Number of free (estimated) parameters.
    pub fn free_dim(&self) -> usize {
        match self.tag {
            FamilyTag::UcT if !self.estimate_dof => 2,
            _ => self.theta_dim(),
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self.tag {
            FamilyTag::Uc => &["sigma_eps", "sigma_eta"],
            FamilyTag::Ar => &["sigma_eps", "sigma_eta", "mu", "kappa"],
            FamilyTag::Armf => &["sigma_eps", "sigma_eta", "kappa"],
            FamilyTag::UcT => &["sigma_eps", "sigma_eta", "nu"],
        }
    }

    /// Indices of strictly positive parameters (averaged on the log scale by RMD-X).
    pub fn positive_params(&self) -> &'static [usize] {
        match self.tag {
            FamilyTag::UcT => &[0, 1, 2],
            _ => &[0, 1],
        }
    }

    /// Minimum number of included observations required for estimation.
    pub fn identifiability_floor(&self) -> usize {
        match self.tag {
            FamilyTag::Uc => 3,
            FamilyTag::Ar => 5,
            FamilyTag::Armf | FamilyTag::UcT => 4,
        }
    }

    fn check_dim(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.theta_dim() {
            return invalid(format!(
                "{} expects {} parameters, got {}",
                self.tag,
                self.theta_dim(),
                theta.len()
            ));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return invalid("parameters must be finite");
        }
        Ok(())
    }

    /// Build the concrete model for `theta`, with the diffuse initial prior
    /// centred at zero (see [`ModelInstance::with_init_mean`]).
    pub fn instantiate(&self, theta: &[f64]) -> Result<ModelInstance> {
        self.validate()?;
        self.check_dim(theta)?;
        let (se, sn) = (theta[0], theta[1]);
        if se < 0.0 || sn < 0.0 {
            return invalid("standard deviations must be nonnegative");
        }
        let check_kappa = |k: f64| {
            if (0.0..1.0).contains(&k) {
                Ok(k)
            } else {
                invalid(format!("kappa must lie in [0, 1), got {k}"))
            }
        };
        let (c, a) = match self.tag {
            FamilyTag::Uc | FamilyTag::UcT => (0.0, 1.0),
            FamilyTag::Ar => {
                let k = check_kappa(theta[3])?;
                (theta[2] * (1.0 - k), k)
            }
            FamilyTag::Armf => {
                let k = check_kappa(theta[2])?;
                (self.fixed_mu.unwrap() * (1.0 - k), k)
            }
        };
        let measurement = match self.tag {
            FamilyTag::UcT => {
                let nu = theta[2];
                if !self.estimate_dof && nu != self.t_dof.unwrap() {
                    return invalid("uc-t degrees of freedom are fixed by the family");
                }
                Measurement::ScaleMixture(ScaleMixture::student_t(nu)?)
            }
            _ => Measurement::Gaussian,
        };
        Ok(ModelInstance {
            dynamics: LinearGaussianModel {
                state_const: c,
                state_coef: a,
                state_sd: se,
                obs_sd: sn,
                init_mean: 0.0,
                init_var: DIFFUSE_INIT_VAR,
            },
            measurement,
        })
    }

    /// Map natural parameters to the unconstrained optimization space.
    pub fn to_unconstrained(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(theta)?;
        let mut z = vec![theta[0].ln(), theta[1].ln()];
        match self.tag {
            FamilyTag::Uc => {}
            FamilyTag::Ar => {
                z.push(theta[2]);
                z.push(logit(theta[3]));
            }
            FamilyTag::Armf => z.push(logit(theta[2])),
            FamilyTag::UcT => {
                if self.estimate_dof {
                    z.push((theta[2] - 2.0).ln());
                }
            }
        }
        Ok(z)
    }

    /// Inverse of [`Self::to_unconstrained`].
    pub fn from_unconstrained(&self, z: &[f64]) -> Vec<f64> {
        let mut theta = vec![z[0].exp(), z[1].exp()];
        match self.tag {
            FamilyTag::Uc => {}
            FamilyTag::Ar => {
                theta.push(z[2]);
                theta.push(logistic(z[3]));
            }
            FamilyTag::Armf => theta.push(logistic(z[2])),
            FamilyTag::UcT => {
                if self.estimate_dof {
                    theta.push(2.0 + z[2].exp());
                } else {
                    theta.push(self.t_dof.unwrap());
                }
            }
        }
        theta
    }

    /// Log prior density of the unconstrained parameters (Jacobian included).
    ///
    /// sigma ~ half-Normal(0, 5^2); kappa ~ Uniform(0, 1); mu ~ Normal(2, 2^2);
    /// log(nu - 2) ~ Normal(log 8, 1).
    pub fn log_prior_unconstrained(&self, z: &[f64]) -> f64 {
        let half_normal_log_sigma = |zi: f64| {
            let s = zi.exp();
            (2.0f64).ln() - 0.5 * LN_2PI - PRIOR_SIGMA_SCALE.ln() - 0.5 * (s / PRIOR_SIGMA_SCALE).powi(2) + zi
        };
        let normal = |x: f64, m: f64, sd: f64| -0.5 * LN_2PI - sd.ln() - 0.5 * ((x - m) / sd).powi(2);
        let uniform_logit = |zi: f64| {
            // log(k (1-k)) with k = logistic(zi)
            -softplus(-zi) - softplus(zi)
        };
        let mut lp = half_normal_log_sigma(z[0]) + half_normal_log_sigma(z[1]);
        match self.tag {
            FamilyTag::Uc => {}
            FamilyTag::Ar => lp += normal(z[2], PRIOR_MU_MEAN, PRIOR_MU_SD) + uniform_logit(z[3]),
            FamilyTag::Armf => lp += uniform_logit(z[2]),
            FamilyTag::UcT => {
                if self.estimate_dof {
                    lp += normal(z[2], DEFAULT_T_DOF.ln(), PRIOR_LOG_DOF_MINUS_2_SD);
                }
            }
        }
        lp
    }

    /// Draw natural parameters from the prior.
    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let half_normal = |rng: &mut R| {
            let v: f64 = rng.sample(StandardNormal);
            (v * PRIOR_SIGMA_SCALE).abs()
        };
        let mut theta = vec![half_normal(rng), half_normal(rng)];
        match self.tag {
            FamilyTag::Uc => {}
            FamilyTag::Ar => {
                theta.push(Normal::new(PRIOR_MU_MEAN, PRIOR_MU_SD).unwrap().sample(rng));
                theta.push(rng.random::<f64>());
            }
            FamilyTag::Armf => theta.push(rng.random::<f64>()),
            FamilyTag::UcT => {
                if self.estimate_dof {
                    let z: f64 = rng.sample(StandardNormal);
                    theta.push(2.0 + (DEFAULT_T_DOF.ln() + PRIOR_LOG_DOF_MINUS_2_SD * z).exp());
                } else {
                    theta.push(self.t_dof.unwrap());
                }
            }
        }
        theta
    }

    /// Deterministic optimizer start points scaled to the included data.
    pub fn start_points(&self, included: &[f64]) -> Vec<Vec<f64>> {
        let n = included.len().max(1) as f64;
        let mean = included.iter().sum::<f64>() / n;
        let var = included.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = if var.sqrt() > 1e-8 { var.sqrt() } else { 1.0 };
        let sigma_pairs = [(0.5 * sd, 0.5 * sd), (0.2 * sd, sd), (sd, 0.2 * sd)];
        let kappas = [0.9, 0.5, 0.98];
        let nu = self.t_dof.unwrap_or(DEFAULT_T_DOF);
        sigma_pairs
            .iter()
            .zip(kappas)
            .map(|(&(se, sn), k)| match self.tag {
                FamilyTag::Uc => vec![se, sn],
                FamilyTag::Ar => vec![se, sn, mean, k],
                FamilyTag::Armf => vec![se, sn, k],
                FamilyTag::UcT => vec![se, sn, nu],
            })
            .collect()
    }
}

/// Recover (mu, kappa) from AR coefficients (c, a) with a < 1.
pub fn ar_from_coefficients(state_const: f64, state_coef: f64) -> Result<(f64, f64)> {
    if !(state_coef < 1.0) {
        return invalid("mean is not identified when the state coefficient is 1");
    }
    Ok((state_const / (1.0 - state_coef), state_coef))
}

pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub(crate) fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

/// Gaussian scale mixture for the measurement noise: component j has weight
/// `weights[j]` and variance `obs_sd^2 * var_scale[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleMixture {
    pub weights: Vec<f64>,
    pub var_scale: Vec<f64>,
}

impl ScaleMixture {
    /// Approximation of a Student-t with `dof` degrees of freedom and unit
    /// variance.
    ///
    /// With G ~ chi^2_dof the noise is N(0, (dof - 2)/G). The mixing variable is
    /// integrated by generalized Gauss-Laguerre quadrature on u = G/2 ~
    /// Gamma(dof/2), nodes and weights from the Golub-Welsch eigenproblem.
    pub fn student_t(dof: f64) -> Result<Self> {
        if !(dof > 2.0 && dof.is_finite()) {
            return invalid(format!("degrees of freedom must exceed 2, got {dof}"));
        }
        let n = T_MIXTURE_NODES;
        let alpha = dof / 2.0 - 1.0;
        let mut jacobi = DMatrix::<f64>::zeros(n, n);
        for k in 0..n {
            jacobi[(k, k)] = 2.0 * k as f64 + alpha + 1.0;
            if k + 1 < n {
                let b = ((k + 1) as f64 * (k as f64 + 1.0 + alpha)).sqrt();
                jacobi[(k, k + 1)] = b;
                jacobi[(k + 1, k)] = b;
            }
        }
        let eig = jacobi.symmetric_eigen();
        let mut nodes: Vec<(f64, f64)> = (0..n)
            .map(|j| (eig.eigenvalues[j], eig.eigenvectors[(0, j)].powi(2)))
            .collect();
        nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = nodes.iter().map(|(_, w)| w).sum();
        Ok(Self {
            weights: nodes.iter().map(|(_, w)| w / total).collect(),
            var_scale: nodes.iter().map(|(u, _)| (dof - 2.0) / (2.0 * u)).collect(),
        })
    }

    /// Mixture density of noise with overall scale `obs_sd`.
    pub fn pdf(&self, x: f64, obs_sd: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.var_scale)
            .map(|(w, s)| {
                let v = obs_sd * obs_sd * s;
                w * (-0.5 * (LN_2PI + v.ln() + x * x / v)).exp()
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Measurement {
    Gaussian,
    ScaleMixture(ScaleMixture),
}

/// Dynamics plus measurement law for one parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInstance {
    pub dynamics: LinearGaussianModel,
    pub measurement: Measurement,
}

impl ModelInstance {
    pub fn with_init_mean(mut self, init_mean: f64) -> Self {
        self.dynamics.init_mean = init_mean;
        self
    }

    /// (log weight, observation variance) per measurement component.
    pub fn obs_components(&self) -> Vec<(f64, f64)> {
        let r = self.dynamics.obs_sd * self.dynamics.obs_sd;
        match &self.measurement {
            Measurement::Gaussian => vec![(0.0, r)],
            Measurement::ScaleMixture(m) => m
                .weights
                .iter()
                .zip(&m.var_scale)
                .map(|(w, s)| (w.ln(), r * s))
                .collect(),
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.measurement, Measurement::Gaussian)
    }

    /// Log-likelihood of the included observations. Exact for Gaussian
    /// measurements; scale mixtures are filtered with per-step moment
    /// matching of the posterior mixture.
    pub fn loglik(&self, values: &[f64], path: &InclusionPath) -> f64 {
        if self.is_gaussian() {
            return crate::statespace::kalman::loglik_values(&self.dynamics, values, path);
        }
        self.run_mixture_filter(values, path, None)
    }

    /// Filtered beliefs and log-likelihood (see [`Self::loglik`] for the
    /// treatment of scale mixtures).
    pub fn filter(&self, values: &[f64], path: &InclusionPath) -> Result<FilterOutput> {
        if values.len() != path.len() {
            return invalid("inclusion path length does not match series length");
        }
        if self.is_gaussian() {
            return filter_values(&self.dynamics, values, path);
        }
        let mut filtered = Vec::with_capacity(values.len());
        let loglik = self.run_mixture_filter(values, path, Some(&mut filtered));
        Ok(FilterOutput { filtered, loglik })
    }

    fn run_mixture_filter(
        &self,
        values: &[f64],
        path: &InclusionPath,
        mut out: Option<&mut Vec<GaussianBelief>>,
    ) -> f64 {
        let comps = self.obs_components();
        let mut belief = self.dynamics.initial_belief();
        let mut loglik = 0.0;
        let mut logw = vec![0.0; comps.len()];
        let mut posts = Vec::with_capacity(comps.len());
        for (&y, inc) in values.iter().zip(path.iter()) {
            let pred = self.dynamics.predict(belief);
            if inc {
                posts.clear();
                for (j, &(lw, r)) in comps.iter().enumerate() {
                    let (post, ll) = update_predicted(pred, y, r);
                    logw[j] = lw + ll;
                    posts.push(post);
                }
                let lse = log_sum_exp_slice(&logw);
                loglik += lse;
                let mut mean = 0.0;
                let mut second = 0.0;
                for (lw, p) in logw.iter().zip(&posts) {
                    let w = (lw - lse).exp();
                    mean += w * p.mean;
                    second += w * (p.var + p.mean * p.mean);
                }
                belief = GaussianBelief {
                    mean,
                    var: (second - mean * mean).max(0.0),
                };
            } else {
                belief = pred;
            }
            if let Some(out) = out.as_deref_mut() {
                out.push(belief);
            }
        }
        loglik
    }
}

/// Naive benchmark: forecast the inflation target at every horizon.
pub fn naive_two_percent(_h: usize) -> f64 {
    INFLATION_TARGET
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn uc_instance_is_random_walk() {
        let m = ModelFamily::uc().instantiate(&[0.35, 0.144]).unwrap();
        assert_eq!(m.dynamics.state_coef, 1.0);
        assert_eq!(m.dynamics.state_const, 0.0);
        assert_eq!(m.dynamics.state_sd, 0.35);
        assert_eq!(m.dynamics.obs_sd, 0.144);
    }

    #[test]
    fn ar_white_noise_corner() {
        let m = ModelFamily::ar().instantiate(&[1.0, 1.0, 2.0, 0.0]).unwrap();
        assert_eq!(m.dynamics.state_const, 2.0);
        assert_eq!(m.dynamics.state_coef, 0.0);
    }

    #[test]
    fn ar_unit_root_rejected() {
        assert!(ModelFamily::ar().instantiate(&[1.0, 1.0, 2.0, 1.0]).is_err());
        assert!(ModelFamily::ar().instantiate(&[1.0, 1.0, 2.0, -0.1]).is_err());
    }

    #[test]
    fn armf_uses_target() {
        let m = ModelFamily::armf().instantiate(&[0.3, 0.5, 0.8]).unwrap();
        assert!((m.dynamics.state_const - 2.0 * 0.2).abs() < 1e-15);
        assert!(ModelFamily {
            fixed_mu: None,
            ..ModelFamily::armf()
        }
        .instantiate(&[0.3, 0.5, 0.8])
        .is_err());
    }

    #[test]
    fn dimension_checked() {
        assert!(ModelFamily::uc().instantiate(&[1.0]).is_err());
        assert!(ModelFamily::ar().instantiate(&[1.0, 1.0, 1.0]).is_err());
        assert!(ModelFamily::uc_t(5.0).instantiate(&[1.0, 1.0]).is_err());
    }

    #[test]
    fn tag_round_trip() {
        for tag in [FamilyTag::Uc, FamilyTag::Ar, FamilyTag::Armf, FamilyTag::UcT] {
            assert_eq!(tag.as_str().parse::<FamilyTag>().unwrap(), tag);
        }
        assert!("ucsvo".parse::<FamilyTag>().is_err());
    }

    #[test]
    fn naive_forecast_is_constant() {
        assert_eq!(naive_two_percent(1), 2.0);
        assert_eq!(naive_two_percent(12), 2.0);
    }

    #[test]
    fn transforms_invert() {
        let fam = ModelFamily::ar();
        let theta = [0.4, 1.1, 2.3, 0.7];
        let back = fam.from_unconstrained(&fam.to_unconstrained(&theta).unwrap());
        for (a, b) in theta.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn uc_prior_integrates_to_one() {
        let fam = ModelFamily::uc();
        let grid: Vec<f64> = (0..401).map(|i| -15.0 + i as f64 * 0.1).collect();
        let mass: f64 = grid
            .iter()
            .flat_map(|&a| grid.iter().map(move |&b| (a, b)))
            .map(|(a, b)| fam.log_prior_unconstrained(&[a, b]).exp())
            .sum::<f64>()
            * 0.1
            * 0.1;
        assert!((mass - 1.0).abs() < 1e-3, "prior mass {mass}");
    }

    #[test]
    fn prior_draws_are_valid() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for fam in [ModelFamily::uc(), ModelFamily::ar(), ModelFamily::armf(), ModelFamily::uc_t(8.0)] {
            for _ in 0..100 {
                let th = fam.sample_prior(&mut rng);
                assert!(fam.instantiate(&th).is_ok(), "{:?} {:?}", fam.tag, th);
            }
        }
    }

    #[test]
    fn t_mixture_converges_to_gaussian() {
        // Gaussian limit taken at the t scale parameter sqrt((nu - 2) / nu).
        let nu = 200.0;
        let mix = ScaleMixture::student_t(nu).unwrap();
        let s2 = (nu - 2.0) / nu;
        let sup = (0..=1200)
            .map(|i| -6.0 + i as f64 * 0.01)
            .map(|x| (mix.pdf(x, 1.0) - (-0.5 * (LN_2PI + s2.ln() + x * x / s2)).exp()).abs())
            .fold(0.0, f64::max);
        assert!(sup <= 1e-3, "sup-norm {sup}");
    }

    #[test]
    fn t_mixture_matches_exact_t_at_high_dof() {
        use statrs::distribution::{Continuous, StudentsT};
        let nu: f64 = 200.0;
        let t = StudentsT::new(0.0, ((nu - 2.0) / nu).sqrt(), nu).unwrap();
        let mix = ScaleMixture::student_t(nu).unwrap();
        let sup = (0..=120)
            .map(|i| -6.0 + i as f64 * 0.1)
            .map(|x| (mix.pdf(x, 1.0) - t.pdf(x)).abs())
            .fold(0.0, f64::max);
        assert!(sup < 1e-8, "sup-norm {sup}");
    }

    #[test]
    fn t_mixture_tracks_student_t() {
        use statrs::distribution::{Continuous, StudentsT};
        let nu: f64 = 5.0;
        let scale = ((nu - 2.0) / nu).sqrt();
        let t = StudentsT::new(0.0, scale, nu).unwrap();
        let mix = ScaleMixture::student_t(nu).unwrap();
        assert!((mix.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for x in [0.0, 0.5, 1.0, 2.0, 3.0] {
            let rel = (mix.pdf(x, 1.0) - t.pdf(x)).abs() / t.pdf(x);
            assert!(rel < 0.05, "x={x} rel={rel}");
        }
    }

    #[test]
    fn ar_coefficients_round_trip() {
        let (mu, kappa) = (2.7, 0.85);
        let m = ModelFamily::ar().instantiate(&[0.1, 0.2, mu, kappa]).unwrap();
        let (mu2, k2) = ar_from_coefficients(m.dynamics.state_const, m.dynamics.state_coef).unwrap();
        assert!((mu2 - mu).abs() < 1e-12);
        assert!((k2 - kappa).abs() < 1e-12);
    }
}
