mod common;

use common::*;
use rmd_core::data::{simulate_contaminated, ContaminationSpec, DEFAULT_SIM_START};
use rmd_core::rmdx::*;
use rmd_core::statespace::mle::{mle_fit, MleOptions};
use rmd_core::*;

const YS: [f64; 8] = [1.4, 0.9, 5.2, 1.8, 2.3, -1.5, 2.0, 2.6];

fn model() -> (LinearGaussianModel, Params) {
    (
        LinearGaussianModel::local_level(0.5, 0.8).with_init(YS[0], 100.0),
        Params::uc(0.5, 0.8, YS[0], 100.0),
    )
}

#[test]
fn exhaustive_enumeration_matches_posterior_mixture() {
    let (m, p) = model();
    let series = TimeSeries::unlabelled(YS.to_vec()).unwrap();
    let paths = enumerate_fixed_size_paths(8, subset_size(8, 0.5));
    assert_eq!(paths.len(), 70);
    let agg = aggregate_known_theta(&m, &series, &paths).unwrap();
    // sum over every C with |C| = 4 of (1/70) E[x_t | y_{C, <= t}]
    let mut count = 0;
    let mut mean = [0.0; 8];
    let mut second = [0.0; 8];
    for bits in 0u32..256 {
        if bits.count_ones() != 4 {
            continue;
        }
        count += 1;
        for t in 0..8 {
            let subset: Vec<usize> = (0..=t).filter(|&s| bits >> s & 1 == 1).collect();
            let (mu, v) = condition(p, &YS, t, &subset);
            mean[t] += mu / 70.0;
            second[t] += (v + mu * mu) / 70.0;
        }
    }
    assert_eq!(count, 70);
    for t in 0..8 {
        assert!((agg.x_bar[t] - mean[t]).abs() < 1e-10, "t={t}");
        assert!((agg.x_var[t] - (second[t] - mean[t] * mean[t])).abs() < 1e-9);
    }
}

#[test]
fn sampled_paths_agree_with_enumeration() {
    let (m, _) = model();
    let series = TimeSeries::unlabelled(YS.to_vec()).unwrap();
    let exact = aggregate_known_theta(&m, &series, &enumerate_fixed_size_paths(8, 4)).unwrap();
    let sampled = sample_paths(&PathSampler::new(8, 0.5, 500, 42)).unwrap();
    let per_path: Vec<Vec<f64>> = sampled
        .iter()
        .map(|p| aggregate_known_theta(&m, &series, std::slice::from_ref(p)).unwrap().x_bar)
        .collect();
    for t in 0..8 {
        let xs: Vec<f64> = per_path.iter().map(|v| v[t]).collect();
        let mean = xs.iter().sum::<f64>() / 500.0;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 499.0).sqrt();
        assert!((mean - exact.x_bar[t]).abs() <= 3.0 * sd / 500f64.sqrt() + 1e-12, "t={t}");
    }
}

#[test]
fn inclusion_frequencies_are_uniform() {
    let paths = sample_paths(&PathSampler::new(10, 0.5, 1000, 7)).unwrap();
    assert!(paths.iter().all(|p| p.count_included() == 5));
    let se = (0.25f64 / 1000.0).sqrt();
    for t in 0..10 {
        let freq = paths.iter().filter(|p| p.get(t)).count() as f64 / 1000.0;
        assert!((freq - 0.5).abs() < 4.0 * se, "position {t}: {freq}");
    }
}

#[test]
fn beta_one_is_full_data_mle() {
    let m = LinearGaussianModel::local_level(0.35, 0.5).with_init(2.0, 0.0);
    let d = simulate_contaminated(&m, 80, &ContaminationSpec::additive(0.1, 10.0, 3), DEFAULT_SIM_START).unwrap();
    let cfg = RmdxConfig { beta: 1.0, n_paths: 25, h_max: 4, ..Default::default() };
    let res = rmd_x_estimate(&ModelFamily::uc(), &d.series, &cfg).unwrap();
    let path = InclusionPath::all(80);
    let fit = mle_fit(&ModelFamily::uc(), &d.series, &path, &MleOptions::default()).unwrap();
    assert_eq!(res.theta_bar, fit.theta);
    assert_eq!(res.n_paths, 1);
    let out = fit.model.filter(d.series.values(), &path).unwrap();
    assert_eq!(res.x_bar, out.means());
    assert_eq!(res.forecast_mixture[0].len(), 1);
}

#[test]
fn aggregates_are_path_averages_and_deterministic() {
    let m = LinearGaussianModel::local_level(0.35, 0.5).with_init(2.0, 0.0);
    let d = simulate_contaminated(&m, 60, &ContaminationSpec::additive(0.1, 10.0, 9), DEFAULT_SIM_START).unwrap();
    let cfg = RmdxConfig { beta: 0.5, n_paths: 40, h_max: 4, seed: 5, keep_per_path: true, theta_scale: ThetaScale::Natural, ..Default::default() };
    let res = rmd_x_estimate(&ModelFamily::uc(), &d.series, &cfg).unwrap();
    let per = res.per_path.as_ref().unwrap();
    let n = per.len() as f64;
    for j in 0..2 {
        let avg = per.iter().map(|p| p.theta[j]).sum::<f64>() / n;
        assert!((res.theta_bar[j] - avg).abs() < 1e-12);
    }
    for t in 0..60 {
        let avg = per.iter().map(|p| p.filtered_means[t]).sum::<f64>() / n;
        assert!((res.x_bar[t] - avg).abs() < 1e-12);
    }
    for h in 0..4 {
        let avg = per.iter().map(|p| p.forecasts[h].mean).sum::<f64>() / n;
        assert!((res.forecast_bar[h] - avg).abs() < 1e-12);
        assert!((res.forecast_mixture[h].mean() - avg).abs() < 1e-12);
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let again = pool.install(|| rmd_x_estimate(&ModelFamily::uc(), &d.series, &cfg).unwrap());
    assert_eq!(res, again);
}

#[test]
fn all_paths_failing_is_estimation_failure() {
    let series = TimeSeries::unlabelled((0..30).map(|t| (t as f64).sin()).collect()).unwrap();
    let cfg = RmdxConfig {
        beta: 0.5,
        n_paths: 5,
        h_max: 1,
        mle: MleOptions { max_iter: 1, ..Default::default() },
        ..Default::default()
    };
    assert!(matches!(rmd_x_estimate(&ModelFamily::uc(), &series, &cfg), Err(RmdError::EstimationFailure(_))));
}

#[test]
fn guards_propagate() {
    let series = TimeSeries::unlabelled(vec![1.0, 2.0, 3.0]).unwrap();
    let cfg = RmdxConfig { beta: 0.15, ..Default::default() };
    assert!(matches!(
        rmd_x_estimate(&ModelFamily::uc(), &series, &cfg),
        Err(RmdError::UnderIdentified { included: 0, required: 3 })
    ));
    let cfg = RmdxConfig { beta: 0.0, ..Default::default() };
    assert!(matches!(rmd_x_estimate(&ModelFamily::uc(), &series, &cfg), Err(RmdError::EmptySubset(_))));
}
