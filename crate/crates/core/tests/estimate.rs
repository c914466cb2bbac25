mod common;

use ccfilter_core::ajd::{admissible, Domain, ModelTag, ParameterVector, RiccatiOptions};
use ccfilter_core::estimate::{
    admissibility_penalty, date_logliks, inverse_transform, objective_fn, qml_estimate, qml_multistart, sandwich, sandwich_se, transform, EstimateOptions,
};
use ccfilter_core::optim::fd_gradient;
use ccfilter_core::simulate::{euler_simulate, SimConfig};
use ccfilter_core::spanning::CCFMeasurement;
use ccfilter_core::statespace::{build_system, PreparedPanel};
use ccfilter_core::Result;
use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const U: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];

fn noise_block(tau: f64) -> DMatrix<f64> {
    let q = U.len();
    let sd: Vec<f64> = (0..2 * q).map(|i| 5e-4 * U[i % q].powi(2) * (tau / 0.04).sqrt()).collect();
    DMatrix::from_fn(2 * q, 2 * q, |i, j| sd[i] * sd[j] * 0.5f64.powi((i as i32 - j as i32).abs()))
}

/// Panel generated from the model itself: y = d + Z v + sigma_kappa * noise, with v an Euler path.
fn model_panel(n_dates: usize, sigma_kappa: f64, seed: u64) -> (ParameterVector, PreparedPanel) {
    let cfg = SimConfig { n_dates, seed, ..Default::default() };
    let truth = cfg.parameters().unwrap();
    let paths = euler_simulate(&cfg, seed).unwrap();
    let blocks: Vec<DMatrix<f64>> = TAUS.iter().map(|&t| noise_block(t)).collect();
    let mut meas: Vec<CCFMeasurement> = paths
        .dates
        .iter()
        .map(|&d| CCFMeasurement {
            quote_date: d,
            tenor_days: vec![10, 30, 60],
            taus: TAUS.to_vec(),
            u_grid: U.to_vec(),
            y: vec![0.0; 6 * U.len()],
            h_blocks: blocks.clone(),
            forwards: vec![100.0; 3],
            rates: vec![0.0; 3],
            exog: vec![],
        })
        .collect();
    let shell = PreparedPanel::new(&meas, 1e-12).unwrap();
    let sys = build_system(&truth, &shell, &RiccatiOptions::default()).unwrap();
    let chols: Vec<DMatrix<f64>> = blocks.iter().map(|b| b.clone().cholesky().unwrap().l()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    for (t, m) in meas.iter_mut().enumerate() {
        let mut y = &sys[t].d + &sys[t].z * DVector::from_element(1, paths.v[t]);
        let n = 2 * U.len();
        for (k, l) in chols.iter().enumerate() {
            let e = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let noise = l * e * sigma_kappa;
            for i in 0..n {
                y[k * n + i] += noise[i];
            }
        }
        m.y = y.iter().copied().collect();
    }
    (truth, PreparedPanel::new(&meas, 1e-12).unwrap())
}

fn random_admissible(rng: &mut ChaCha8Rng) -> ParameterVector {
    loop {
        let mut p = baseline();
        for i in 0..p.values.len() {
            let v = p.values[i];
            p.values[i] = match p.domains[i] {
                Domain::Correlation => rng.random_range(-0.999..0.999),
                Domain::UnitInterval => rng.random_range(0.01..0.99),
                Domain::Unrestricted => rng.random_range(-1.0..1.0),
                _ => v * rng.random_range(0.2f64..5.0),
            };
        }
        p.fixed.iter_mut().for_each(|f| *f = false);
        if admissible(&p).ok {
            return p;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn transform_roundtrip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_admissible(&mut rng);
        let back = inverse_transform(&p, &transform(&p));
        for (a, b) in back.values.iter().zip(&p.values) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn penalty_inactive_at_table1() {
    assert_eq!(admissibility_penalty(&baseline(), 1e6), 0.0);
    let mut p = ParameterVector::defaults(ModelTag::Svcdej);
    p.set("kappa", 3.0).unwrap();
    assert!(admissibility_penalty(&p, 1e6) > 0.0);
}

#[test]
fn quadratic_sandwich_matches_analytic() {
    // ell_t(z) = -1/2 sum_k c_k (z_k - x_tk)^2: A = diag(c), B_kk = c_k^2 var_k, SE_k = sqrt(var_k / T)
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = 400;
    let c = [2.0, 0.5, 7.0];
    let x: Vec<[f64; 3]> = (0..t).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-3.0..3.0), rng.random_range(0.0..0.2)]).collect();
    let zhat: Vec<f64> = (0..3).map(|k| x.iter().map(|r| r[k]).sum::<f64>() / t as f64).collect();
    let ell = |z: &[f64]| -> Result<Vec<f64>> { Ok(x.iter().map(|r| -0.5 * (0..3).map(|k| c[k] * (z[k] - r[k]).powi(2)).sum::<f64>()).collect()) };
    let s = sandwich(&ell, &zhat, 1e-4, 1e-5).unwrap();
    assert!(s.ridge.is_none());
    for k in 0..3 {
        assert!((s.a[(k, k)] - c[k]).abs() < 1e-6 * c[k]);
        let var = x.iter().map(|r| (r[k] - zhat[k]).powi(2)).sum::<f64>() / t as f64;
        let se = s.covariance[(k, k)].sqrt();
        assert!((se - (var / t as f64).sqrt()).abs() < 1e-6 * se, "k={k}");
    }
}

#[test]
fn gaussian_location_sandwich_matches_sample_se() {
    // working model N(mu, 1) on data with sd 2.5: the sandwich corrects the scale
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let t = 2000;
    let x: Vec<f64> = (0..t).map(|_| 1.3 + 2.5 * rng.sample::<f64, _>(StandardNormal)).collect();
    let mean = x.iter().sum::<f64>() / t as f64;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t as f64 - 1.0)).sqrt();
    let ell = |z: &[f64]| -> Result<Vec<f64>> { Ok(x.iter().map(|v| -0.5 * (v - z[0]).powi(2)).collect()) };
    let s = sandwich(&ell, &[mean], 1e-4, 1e-5).unwrap();
    let se = s.covariance[(0, 0)].sqrt();
    let oracle = sd / (t as f64).sqrt();
    assert!((se / oracle - 1.0).abs() < 0.05, "{se} vs {oracle}");
}

#[test]
fn indefinite_hessian_gets_ridge() {
    let ell = |z: &[f64]| -> Result<Vec<f64>> { Ok(vec![0.5 * z[0] * z[0] - 0.5 * z[1] * z[1], 0.1 * z[0]]) };
    let s = sandwich(&ell, &[0.0, 0.0], 1e-4, 1e-5).unwrap();
    assert!(s.ridge.is_some());
    assert!(s.covariance.iter().all(|v| v.is_finite()));
}

#[test]
fn estimate_on_model_panel() {
    let (truth, panel) = model_panel(150, 0.02, 5);
    let opts = EstimateOptions::default();
    let r = qml_estimate(&panel, &truth, &opts).unwrap();
    assert!(admissible(&r.theta_hat).ok);
    assert!(r.convergence.objective <= r.convergence.initial_objective);
    assert!(r.convergence.gradient_max_abs < 1e-3, "{:?}", r.convergence);
    let start_ll: f64 = date_logliks(&truth, &panel, &opts).unwrap().iter().sum();
    assert!(r.loglik >= start_ll);
    for (name, v, se) in r.table() {
        let i = truth.index(&name).unwrap();
        if truth.fixed[i] {
            assert_eq!(v, truth.values[i]);
            assert!(se.is_none());
        } else {
            let se = se.unwrap();
            assert!(se > 0.0 && se.is_finite(), "{name}");
            assert!((v - truth.values[i]).abs() < 0.3 * truth.values[i].abs(), "{name}: {v}");
        }
    }
    let scores = r.scores.unwrap();
    assert_eq!(scores.nrows(), panel.len());
    assert_eq!(scores.ncols(), truth.free_indices().len());
}

#[test]
fn exact_measurements_keep_the_start() {
    // no measurement noise and sigma_kappa held fixed: the cross-section pins the parameters
    let (mut truth, panel) = model_panel(80, 0.0, 9);
    truth.set("sigma_kappa", 1e-4).unwrap();
    truth.set_fixed("sigma_kappa", true).unwrap();
    let opts = EstimateOptions { compute_se: false, ..Default::default() };
    let r = qml_estimate(&panel, &truth, &opts).unwrap();
    for i in truth.free_indices() {
        let rel = (r.theta_hat.values[i] - truth.values[i]).abs() / truth.values[i].abs();
        assert!(rel < 1e-2, "{}: {} vs {}", truth.names[i], r.theta_hat.values[i], truth.values[i]);
    }
}

#[test]
fn objective_is_deterministic_and_multistart_keeps_best() {
    let (truth, panel) = model_panel(40, 0.02, 21);
    let opts = EstimateOptions { compute_se: false, ..Default::default() };
    let f = objective_fn(&truth, &panel, &opts);
    let z = transform(&truth);
    assert_eq!(f(&z), f(&z));
    let g = fd_gradient(&*f, &z, 1e-5);
    assert!(g.iter().all(|v| v.is_finite()));
    let mut other = truth.clone();
    other.set("kappa", 7.5).unwrap();
    other.set("delta", 80.0).unwrap();
    let single = qml_estimate(&panel, &other, &opts).unwrap();
    let best = qml_multistart(&panel, &[other, truth.clone()], &opts).unwrap();
    assert!(best.convergence.objective <= single.convergence.objective);
}

#[test]
fn sandwich_se_maps_to_natural_units() {
    let (truth, panel) = model_panel(60, 0.02, 13);
    let opts = EstimateOptions::default();
    let r = qml_estimate(&panel, &truth, &EstimateOptions { compute_se: false, ..opts.clone() }).unwrap();
    let se = sandwich_se(&r.theta_hat, &panel, &opts).unwrap();
    // sigma is log-transformed: natural SE = sigma * SE(log sigma)
    let free = r.theta_hat.free_indices();
    let k = free.iter().position(|&i| r.theta_hat.names[i] == "sigma").unwrap();
    let z = transform(&r.theta_hat);
    let ell = |zz: &[f64]| date_logliks(&inverse_transform(&r.theta_hat, zz), &panel, &opts);
    let s = sandwich(&ell, &z, 1e-4, 1e-5).unwrap();
    let sigma = r.theta_hat.get("sigma");
    let expect = sigma * s.covariance[(k, k)].sqrt();
    assert!((se.standard_errors[free[k]].unwrap() - expect).abs() < 1e-12 * expect.max(1.0));
}
