//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Scalar model parameters used by the oracles.
#[derive(Clone, Copy, Debug)]
pub struct Params {
    pub c: f64,
    pub a: f64,
    pub q: f64,
    pub r: f64,
    pub m0: f64,
    pub p0: f64,
}

impl Params {
    pub fn uc(se: f64, sn: f64, m0: f64, p0: f64) -> Self {
        Self { c: 0.0, a: 1.0, q: se * se, r: sn * sn, m0, p0 }
    }
}

/// Mean vector and covariance of (x_1..x_T) from the loading representation
/// x_t = a^t x_0 + sum_i a^(t-i) e_i + c * sum_{i<t} a^i.
pub fn latent_moments(p: Params, len: usize) -> (DVector<f64>, DMatrix<f64>) {
    // loadings on (x_0 - m0, e_1, ..., e_T)
    let mut load = DMatrix::<f64>::zeros(len, len + 1);
    let mut mean = DVector::<f64>::zeros(len);
    for t in 1..=len {
        load[(t - 1, 0)] = p.a.powi(t as i32);
        for i in 1..=t {
            load[(t - 1, i)] = p.a.powi((t - i) as i32);
        }
        let drift: f64 = (0..t).map(|i| p.a.powi(i as i32)).sum();
        mean[t - 1] = p.a.powi(t as i32) * p.m0 + p.c * drift;
    }
    let mut var = DMatrix::<f64>::zeros(len + 1, len + 1);
    var[(0, 0)] = p.p0;
    for i in 1..=len {
        var[(i, i)] = p.q;
    }
    let cov = &load * var * load.transpose();
    (mean, cov)
}

/// E[x_t | y_s, s in S] and Var[x_t | ...] by direct Gaussian conditioning.
pub fn condition(p: Params, ys: &[f64], t: usize, subset: &[usize]) -> (f64, f64) {
    let (mu, cov) = latent_moments(p, ys.len());
    if subset.is_empty() {
        return (mu[t], cov[(t, t)]);
    }
    let k = subset.len();
    let mut syy = DMatrix::<f64>::zeros(k, k);
    let mut sxy = DVector::<f64>::zeros(k);
    let mut resid = DVector::<f64>::zeros(k);
    for (i, &s) in subset.iter().enumerate() {
        for (j, &u) in subset.iter().enumerate() {
            syy[(i, j)] = cov[(s, u)] + if s == u { p.r } else { 0.0 };
        }
        sxy[i] = cov[(t, s)];
        resid[i] = ys[s] - mu[s];
    }
    let chol = syy.cholesky().expect("observation covariance not positive definite");
    let w = chol.solve(&sxy);
    // Var = S_xx - S_xy' S_yy^-1 S_xy, with the quadratic form as a squared norm
    let half = chol.l().solve_lower_triangular(&sxy).expect("triangular solve");
    (mu[t] + w.dot(&resid), cov[(t, t)] - half.norm_squared())
}

/// Log density of the included observations by direct multivariate Gaussian evaluation.
pub fn joint_loglik(p: Params, ys: &[f64], subset: &[usize]) -> f64 {
    let (mu, cov) = latent_moments(p, ys.len());
    let k = subset.len();
    if k == 0 {
        return 0.0;
    }
    let mut syy = DMatrix::<f64>::zeros(k, k);
    let mut resid = DVector::<f64>::zeros(k);
    for (i, &s) in subset.iter().enumerate() {
        for (j, &u) in subset.iter().enumerate() {
            syy[(i, j)] = cov[(s, u)] + if s == u { p.r } else { 0.0 };
        }
        resid[i] = ys[s] - mu[s];
    }
    let chol = syy.cholesky().expect("not positive definite");
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let quad = resid.dot(&chol.solve(&resid));
    -0.5 * (k as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
}

fn normal_pdf(x: f64, m: f64, v: f64) -> f64 {
    (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
}

/// One enumerated inclusion path with its posterior weight and final filtered state.
#[derive(Clone, Debug)]
pub struct EnumeratedPath {
    pub included: Vec<bool>,
    pub weight: f64,
    pub mean: f64,
    pub var: f64,
}

/// Exhaustive evaluation of the product-form posterior over all 2^T inclusion
/// paths at a known parameter value:
/// weight(C) ∝ prod_t [C_t: beta f(y_t | C^{t-1}) / F_t ; else 1 - beta],
/// with F_t the path-weighted predictive density at time t.
pub fn enumerate_rmdn(p: Params, ys: &[f64], beta: f64) -> Vec<EnumeratedPath> {
    let len = ys.len();
    // predictive density of y_t under every prefix, from direct conditioning
    let pred = |t: usize, prefix: &[bool]| -> f64 {
        let subset: Vec<usize> = (0..t).filter(|&s| prefix[s]).collect();
        let (mu, cov) = latent_moments(p, len);
        let (m, v) = if subset.is_empty() { (mu[t], cov[(t, t)]) } else {
            // x_t | y_S
            condition(p, ys, t, &subset)
        };
        normal_pdf(ys[t], m, v + p.r)
    };
    let mut f = Vec::with_capacity(len);
    for t in 0..len {
        // normalized prefix weights at t - 1
        let mut num = 0.0;
        let mut den = 0.0;
        for bits in 0..(1u32 << t) {
            let prefix: Vec<bool> = (0..t).map(|s| bits >> s & 1 == 1).collect();
            let w = prefix_weight(&prefix, beta, &f, &pred);
            num += w * pred(t, &prefix);
            den += w;
        }
        f.push(num / den);
    }
    let mut out = Vec::new();
    let mut total = 0.0;
    for bits in 0..(1u32 << len) {
        let included: Vec<bool> = (0..len).map(|s| bits >> s & 1 == 1).collect();
        let weight = prefix_weight(&included, beta, &f, &pred);
        let subset: Vec<usize> = (0..len).filter(|&s| included[s]).collect();
        let (mean, var) = condition(p, ys, len - 1, &subset);
        total += weight;
        out.push(EnumeratedPath { included, weight, mean, var });
    }
    for e in &mut out {
        e.weight /= total;
    }
    out
}

fn prefix_weight(prefix: &[bool], beta: f64, f: &[f64], pred: &dyn Fn(usize, &[bool]) -> f64) -> f64 {
    prefix
        .iter()
        .enumerate()
        .map(|(s, &c)| if c { beta * pred(s, &prefix[..s]) / f[s] } else { 1.0 - beta })
        .product()
}

/// Smoothed P(C_t = 1 | y^T) from an enumeration.
pub fn enumerated_inclusion(paths: &[EnumeratedPath]) -> Vec<f64> {
    let len = paths[0].included.len();
    (0..len)
        .map(|t| paths.iter().filter(|e| e.included[t]).map(|e| e.weight).sum())
        .collect()
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Asymptotic 1% critical value of the two-sample KS statistic.
pub fn ks_critical_1pct(n: usize, m: usize) -> f64 {
    1.628 * ((n + m) as f64 / (n * m) as f64).sqrt()
}

/// Normal-approximation one-sided p-value of the Mann-Whitney U test that
/// `low` tends to be smaller than `high`.
pub fn rank_sum_p_lower(low: &[f64], high: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = low.iter().map(|&v| (v, true)).chain(high.iter().map(|&v| (v, false))).collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    // average ranks for ties
    let mut ranks = vec![0.0; all.len()];
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[k] = r;
        }
        i = j + 1;
    }
    let n1 = low.len() as f64;
    let n2 = high.len() as f64;
    let r1: f64 = all.iter().zip(&ranks).filter(|(x, _)| x.1).map(|(_, r)| r).sum();
    let u = r1 - n1 * (n1 + 1.0) / 2.0;
    let mean = n1 * n2 / 2.0;
    let sd = (n1 * n2 * (n1 + n2 + 1.0) / 12.0).sqrt();
    let z = (u - mean) / sd;
    0.5 * libm_erfc(-z / std::f64::consts::SQRT_2)
}

fn libm_erfc(x: f64) -> f64 {
    statrs::function::erf::erfc(x)
}
