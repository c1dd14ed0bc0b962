use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use rmd_core::rmdn::{RmdnConfig, ThetaParticleSystem};
use rmd_core::rmdx::{rmd_x_estimate, RmdxConfig};
use rmd_core::statespace::{filter_series, mle_fit, MleOptions};
use rmd_core::{InclusionPath, LinearGaussianModel, ModelFamily, TimeSeries};
use rmd_ffi::*;

const YS: [f64; 12] = [2.1, 1.7, 2.6, 9.0, 1.9, 2.2, 2.8, 2.0, 1.4, 2.5, 2.3, 1.8];

fn series() -> *mut RmdSeries {
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { rmd_series_new(YS.as_ptr(), YS.len(), 2000, 1, &mut s) }, RmdStatus::Ok);
    s
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(rmd_last_error_message()) }.to_string_lossy().into_owned()
}

#[test]
fn kalman_filter_matches_core() {
    let s = series();
    assert_eq!(unsafe { rmd_series_len(s) }, 12);
    let m = RmdModel { state_const: 0.0, state_coef: 1.0, state_sd: 0.3, obs_sd: 0.6, init_mean: 2.0, init_var: 100.0 };
    let include: Vec<u8> = (0..12).map(|t| (t != 3) as u8).collect();
    let mut means = [0.0; 12];
    let mut vars = [0.0; 12];
    let mut ll = 0.0;
    let st = unsafe { rmd_kalman_filter(s, &m, include.as_ptr(), means.as_mut_ptr(), vars.as_mut_ptr(), &mut ll) };
    assert_eq!(st, RmdStatus::Ok);

    let model = LinearGaussianModel::local_level(0.3, 0.6).with_init(2.0, 100.0);
    let flags: Vec<bool> = include.iter().map(|b| *b != 0).collect();
    let ts = TimeSeries::unlabelled(YS.to_vec()).unwrap();
    let out = filter_series(&model, &ts, &InclusionPath::from_bools(&flags)).unwrap();
    assert_eq!(ll, out.loglik);
    assert_eq!(means.to_vec(), out.means());
    assert_eq!(vars[11], out.filtered[11].var);

    let bad = RmdModel { obs_sd: -1.0, ..m };
    assert_ne!(unsafe { rmd_kalman_filter(s, &bad, ptr::null(), ptr::null_mut(), ptr::null_mut(), &mut ll) }, RmdStatus::Ok);
    assert!(!last_error().is_empty());
    unsafe { rmd_series_free(s) };
}

#[test]
fn mle_and_rmdx_match_core() {
    let s = series();
    let uc = CString::new("uc").unwrap();
    let ts = TimeSeries::unlabelled(YS.to_vec()).unwrap();

    let mut theta = [0.0; 4];
    let mut len = 0;
    let mut ll = 0.0;
    assert_eq!(unsafe { rmd_mle_fit(s, uc.as_ptr(), theta.as_mut_ptr(), 4, &mut len, &mut ll) }, RmdStatus::Ok);
    let fit = mle_fit(&ModelFamily::uc(), &ts, &InclusionPath::all(12), &MleOptions::default()).unwrap();
    assert_eq!(&theta[..len], fit.theta.as_slice());
    assert_eq!(ll, fit.loglik);
    assert_eq!(unsafe { rmd_mle_fit(s, uc.as_ptr(), theta.as_mut_ptr(), 1, &mut len, &mut ll) }, RmdStatus::BufferTooSmall);

    let mut res = ptr::null_mut();
    assert_eq!(unsafe { rmd_rmdx_estimate(s, uc.as_ptr(), 0.75, 20, 4, 9, &mut res) }, RmdStatus::Ok);
    let cfg = RmdxConfig { beta: 0.75, n_paths: 20, h_max: 4, seed: 9, ..Default::default() };
    let direct = rmd_x_estimate(&ModelFamily::uc(), &ts, &cfg).unwrap();
    let mut t = [0.0; 2];
    assert_eq!(unsafe { rmd_rmdx_theta(res, t.as_mut_ptr(), 2, ptr::null_mut()) }, RmdStatus::Ok);
    assert_eq!(t.to_vec(), direct.theta_bar);
    let mut xs = [0.0; 12];
    assert_eq!(unsafe { rmd_rmdx_filtered_means(res, xs.as_mut_ptr(), 12) }, RmdStatus::Ok);
    assert_eq!(xs.to_vec(), direct.x_bar);
    let (mut m, mut v) = (0.0, 0.0);
    assert_eq!(unsafe { rmd_rmdx_forecast(res, 4, &mut m, &mut v) }, RmdStatus::Ok);
    assert_eq!(m, direct.forecast_mixture[3].mean());
    assert_eq!(unsafe { rmd_rmdx_forecast(res, 5, &mut m, &mut v) }, RmdStatus::InvalidInput);
    unsafe { rmd_rmdx_free(res) };

    let mut res = ptr::null_mut();
    assert_eq!(unsafe { rmd_rmdx_estimate(s, uc.as_ptr(), 0.1, 20, 4, 9, &mut res) }, RmdStatus::UnderIdentified);
    assert!(res.is_null());
    let bogus = CString::new("garch").unwrap();
    assert_eq!(unsafe { rmd_rmdx_estimate(s, bogus.as_ptr(), 0.5, 20, 4, 9, &mut res) }, RmdStatus::InvalidInput);
    assert!(last_error().contains("garch"));
    unsafe { rmd_series_free(s) };
}

#[test]
fn rmdn_handle_matches_core() {
    let uc = CString::new("uc").unwrap();
    let mut sys = ptr::null_mut();
    assert_eq!(unsafe { rmd_rmdn_new(uc.as_ptr(), 0.5, 16, 4, 3, YS[0], YS.len(), &mut sys) }, RmdStatus::Ok);
    let cfg = RmdnConfig { n_theta: 16, inner_cap: Some(4), seed: 3, ..Default::default() };
    let mut direct = ThetaParticleSystem::new(&ModelFamily::uc(), 0.5, &cfg, YS[0], YS.len()).unwrap();
    let mut probs = [0.0; 12];
    assert_eq!(unsafe { rmd_rmdn_smoothed_inclusion(sys, probs.as_mut_ptr(), 12) }, RmdStatus::InvalidState);
    for &y in &YS {
        assert_eq!(unsafe { rmd_rmdn_update(sys, y) }, RmdStatus::Ok);
        direct.rmd_n_update(y).unwrap();
        direct.maybe_rejuvenate().unwrap();
    }
    assert_eq!(unsafe { rmd_rmdn_log_evidence(sys) }, direct.log_evidence);
    assert_eq!(unsafe { rmd_rmdn_filtered_mean(sys) }, direct.filtered_mean());
    assert_eq!(unsafe { rmd_rmdn_update(sys, 1.0) }, RmdStatus::InvalidState);
    assert_eq!(unsafe { rmd_rmdn_smoothed_inclusion(sys, probs.as_mut_ptr(), 12) }, RmdStatus::Ok);
    assert_eq!(probs.to_vec(), direct.smoothed_inclusion().unwrap().probs);
    let qs = [0.025, 0.5, 0.975];
    let mut q = [0.0; 6];
    assert_eq!(unsafe { rmd_rmdn_posterior_quantiles(sys, qs.as_ptr(), 3, q.as_mut_ptr(), 6) }, RmdStatus::Ok);
    assert!(q[0] <= q[1] && q[1] <= q[2] && q[3] <= q[4] && q[4] <= q[5]);
    let (mut m, mut v) = (0.0, 0.0);
    assert_eq!(unsafe { rmd_rmdn_forecast(sys, 4, &mut m, &mut v) }, RmdStatus::Ok);
    let f = direct.forecast_average(4, None).unwrap();
    assert_eq!((m, v), (f.mean, f.var));
    let mut lp = 0.0;
    assert_eq!(unsafe { rmd_rmdn_log_predictive(sys, 2.0, &mut lp) }, RmdStatus::Ok);
    assert_eq!(lp, direct.log_predictive_density(2.0).unwrap());
    unsafe { rmd_rmdn_free(sys) };
}

#[test]
fn eval_functions_and_null_handling() {
    let a: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
    let b: Vec<f64> = (0..20).map(|i| (i as f64 * 0.91).cos()).collect();
    let mut w = RmdWlr::default();
    assert_eq!(unsafe { rmd_wlr_test(a.as_ptr(), b.as_ptr(), 20, &mut w) }, RmdStatus::Ok);
    let direct = rmd_core::eval::wlr_test(&a, &b).unwrap();
    assert_eq!((w.wlr_hat, w.t_stat, w.p_right), (direct.wlr_hat, direct.t_stat, direct.p_right));
    assert_eq!(unsafe { rmd_wlr_test(a.as_ptr(), b.as_ptr(), 5, &mut w) }, RmdStatus::InvalidInput);
    assert_eq!(unsafe { rmd_wlr_test(ptr::null(), b.as_ptr(), 20, &mut w) }, RmdStatus::NullPointer);

    let mut m = 0.0;
    assert_eq!(unsafe { rmd_msfe([1.0, 2.0].as_ptr(), [0.0, 0.0].as_ptr(), 2, &mut m) }, RmdStatus::Ok);
    assert_eq!(m, 2.5);

    let mut s = ptr::null_mut();
    assert_eq!(unsafe { rmd_series_new(ptr::null(), 3, 2000, 1, &mut s) }, RmdStatus::NullPointer);
    assert_eq!(unsafe { rmd_series_new([1.0].as_ptr(), 1, 2000, 5, &mut s) }, RmdStatus::InvalidInput);
    assert_eq!(unsafe { rmd_series_len(ptr::null()) }, 0);
    unsafe { rmd_series_free(ptr::null_mut()) };
    let p = CString::new("/nonexistent/series.csv").unwrap();
    assert_eq!(unsafe { rmd_series_from_csv(p.as_ptr(), &mut s) }, RmdStatus::Io);
    let v = unsafe { CStr::from_ptr(rmd_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn target_dir() -> PathBuf {
    // target/<profile>/deps/<test binary>
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_header() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header_dir = manifest.join("include");
    assert!(header_dir.join("rmd.h").exists());
    let lib = target_dir().join("librmd_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "rmd.h"
int main(void) {
    double ys[8] = {2.1, 1.7, 2.6, 9.0, 1.9, 2.2, 2.8, 2.0};
    RmdSeries *s = NULL;
    if (rmd_series_new(ys, 8, 1990, 1, &s) != RMD_STATUS_OK) return 1;
    RmdModel m = {0.0, 1.0, 0.3, 0.6, 2.0, 100.0};
    double ll = 0.0;
    if (rmd_kalman_filter(s, &m, NULL, NULL, NULL, &ll) != RMD_STATUS_OK) return 2;
    RmdRmdn *f = NULL;
    if (rmd_rmdn_new("uc", 0.5, 8, 4, 1, ys[0], 8, &f) != RMD_STATUS_OK) return 3;
    for (int i = 0; i < 8; i++) rmd_rmdn_update(f, ys[i]);
    if (rmd_rmdn_update(f, 1.0) != RMD_STATUS_INVALID_STATE) return 4;
    if (rmd_last_error_message() == NULL) return 5;
    printf("%.6f\n", ll);
    rmd_rmdn_free(f);
    rmd_series_free(s);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = tmp.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&header_dir)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let ll: f64 = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
    let model = LinearGaussianModel::local_level(0.3, 0.6).with_init(2.0, 100.0);
    let ts = TimeSeries::unlabelled(YS[..8].to_vec()).unwrap();
    let direct = filter_series(&model, &ts, &InclusionPath::all(8)).unwrap().loglik;
    assert!((ll - direct).abs() < 1e-6);
}
