//! Acceptance suite. Runs without the libtest harness so every criterion prints
//! exactly one PASS/FAIL line. Criteria 6 and 7 take tens of minutes on one core
//! and run only when `--ignored` (or `--include-ignored`) is passed:
//!
//! cargo test --release -p ccfilter-core --test acceptance -- --ignored

mod common;

use ccfilter_core::ajd::{build_model, riccati_solve, transition_coeffs, ConditionalMomentCoeffs};
use ccfilter_core::montecarlo::{monte_carlo, replication_panel, threshold_sweep, MonteCarloOptions};
use ccfilter_core::simulate::{euler_step, simulation_model, CosPricer, SimConfig};
use ccfilter_core::spanning::{log_ccf_unwrap, measurement_covariance, span_ccf, span_ccf_grid, CovNode, SpanOptions};
use ccfilter_core::statespace::{filter_panel, kalman_pass, FilterOptions, PreparedPanel, SystemMatrices};
use ccfilter_core::spanning::CCFMeasurement;
use ccfilter_core::surface::prepare_slice;
use chrono::{Days, NaiveDate};
use common::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};
use rand_distr::StandardNormal;
use std::time::{Duration, Instant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn run(id: u32, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let out = f();
    let dt = t0.elapsed();
    let in_time = dt <= budget;
    let pass = out.pass && in_time;
    let time = format!("{:.1}s of {:.0}s budget", dt.as_secs_f64(), budget.as_secs_f64());
    println!("criterion {id} [{name}]: {} ({}; {time})", if pass { "PASS" } else { "FAIL" }, out.detail);
    pass
}

fn skip(id: u32, name: &str) {
    println!("criterion {id} [{name}]: SKIPPED (slow suite; pass --ignored)");
}

// 1

fn heston_oracle() -> Outcome {
    let r = 0.02;
    let m = heston_model(r);
    let u: Vec<f64> = (1..=20).map(f64::from).collect();
    let c = riccati_solve(&m, &u, &TAUS).unwrap();
    let mut worst: f64 = 0.0;
    for (i, &uu) in u.iter().enumerate() {
        for (j, &t) in TAUS.iter().enumerate() {
            let (cc, dd) = heston_cd(uu, t, 8.0, 0.015, 0.45, -0.95, r);
            let v = 0.015;
            let got = c.alpha(i, j) + c.beta(i, j)[1] * v;
            worst = worst.max((got - (cc + dd * v)).norm());
        }
    }
    Outcome { pass: worst < 1e-8, detail: format!("max |log-CCF error| {worst:.2e} < 1e-8") }
}

// 2

fn conditional_moments() -> Outcome {
    let p = baseline();
    let model = simulation_model(&p);
    let dt = 1.0 / 250.0;
    let v0 = 0.015;
    let tr = transition_coeffs(&p, dt, &[0.0, v0]).unwrap();
    let x0 = DVector::from_element(1, v0);
    let (mean, var) = (tr.mean(&x0)[0], tr.variance(&x0)[(0, 0)]);
    let n = 1_000_000;
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    let mut draws = Vec::with_capacity(n);
    for _ in 0..n {
        let mut x = [0.0, v0];
        euler_step(&model, &mut x, dt, &mut rng);
        draws.push(x[1]);
    }
    let nf = n as f64;
    let m1 = draws.iter().sum::<f64>() / nf;
    let c2: Vec<f64> = draws.iter().map(|x| (x - m1).powi(2)).collect();
    let s2 = c2.iter().sum::<f64>() / (nf - 1.0);
    let m4 = c2.iter().map(|x| x * x).sum::<f64>() / nf;
    let z_mean = (m1 - mean).abs() / (s2 / nf).sqrt();
    let z_var = (s2 - var).abs() / ((m4 - s2 * s2) / nf).sqrt();
    Outcome { pass: z_mean < 3.0 && z_var < 3.0, detail: format!("mean off by {z_mean:.2} SE, variance off by {z_var:.2} SE, limit 3") }
}

// 3

fn spanning_fidelity() -> Outcome {
    let p = baseline();
    let (days, v) = (10, 0.015);
    let ms = model_slice(&p, days, v, 0.005);
    let ps = prepare_slice(&ms.slice(days, &ms.prices)).unwrap();
    let u: Vec<f64> = (1..=20).map(f64::from).collect();
    let phi = span_ccf(&ps, &u, &SpanOptions::default()).unwrap();
    let c = riccati_solve(&build_model(&p).unwrap(), &u, &[ms.tau]).unwrap();
    let worst = phi.iter().enumerate().map(|(i, z)| (z - c.log_ccf(i, 0, &[0.0, v]).exp()).norm()).fold(0.0, f64::max);
    Outcome { pass: worst < 1e-3, detail: format!("max |phi_hat - phi| {worst:.2e} < 1e-3 over u=1..20, tau=10d, {} strikes", ms.strikes.len()) }
}

// 4

fn covariance_law(u: &[f64], days: i64, draws: usize, seed: u64) -> f64 {
    let sk = 0.02;
    let ms = model_slice(&baseline(), days, 0.015, 0.01);
    let m = ms.m();
    let phi = span_ccf_grid(&m, &ms.prices, u, ms.tau, 100.0, 0.0);
    let l0 = log_ccf_unwrap(u, &phi).unwrap();
    let nodes: Vec<CovNode> = (1..m.len()).map(|j| CovNode { m: m[j], dm: m[j] - m[j - 1], bsiv: ms.bsiv[j], vega: ms.vega[j] }).collect();
    let h = measurement_covariance(&nodes, u, &phi, 100.0, 1.0).unwrap() * (sk * sk);
    let q = u.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(draws);
    for _ in 0..draws {
        let noisy: Vec<f64> = (0..m.len()).map(|j| ms.prices[j] + sk * ms.bsiv[j] * ms.vega[j] * rng.sample::<f64, _>(StandardNormal)).collect();
        let l = log_ccf_unwrap(u, &span_ccf_grid(&m, &noisy, u, ms.tau, 100.0, 0.0)).unwrap();
        let mut x = vec![0.0; 2 * q];
        for i in 0..q {
            x[i] = l[i].re - l0[i].re;
            x[q + i] = l[i].im - l0[i].im;
        }
        xs.push(x);
    }
    let n = draws as f64;
    let mut worst: f64 = 0.0;
    for a in 0..2 * q {
        for b in a..2 * q {
            let prod: Vec<f64> = xs.iter().map(|x| x[a] * x[b]).collect();
            let mean = prod.iter().sum::<f64>() / n;
            let var = prod.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0);
            worst = worst.max((mean - h[(a, b)]).abs() / (var / n).sqrt());
        }
    }
    worst
}

fn covariance() -> Outcome {
    let u = [1.0, 2.0, 5.0, 10.0, 20.0];
    let z10 = covariance_law(&u, 10, 10_000, 41);
    let z30 = covariance_law(&u, 30, 10_000, 42);
    let z = z10.max(z30);
    Outcome { pass: z < 5.0, detail: format!("max element deviation {z:.2} SE < 5 (10d {z10:.2}, 30d {z30:.2}; 10^4 draws)") }
}

// 5

fn psd(rng: &mut ChaCha8Rng, n: usize, cond: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = a.qr().q();
    let ev = DVector::from_fn(n, |i, _| cond.powf(-(i as f64) / (n as f64 - 1.0)));
    &q * DMatrix::from_diagonal(&ev) * q.transpose()
}

/// p = 8 observation, d = 1 state; the full filter works with the 8 x 8 innovation covariance.
fn collapsed_identity() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let tr = ConditionalMomentCoeffs {
            c: DVector::from_element(1, 0.004),
            t: DMatrix::from_element(1, 1, 0.7),
            q0: DMatrix::from_element(1, 1, 1e-5),
            q1: vec![DMatrix::from_element(1, 1, 2e-3)],
            dt: 1.0 / 250.0,
        };
        let day0 = NaiveDate::from_ymd_opt(2022, 1, 3).unwrap();
        let (mut systems, mut meas, mut hs) = (Vec::new(), Vec::new(), Vec::new());
        let mut x: f64 = 0.013;
        for t in 0..40 {
            let z = DMatrix::from_fn(8, 1, |_, _| rng.random_range(-3.0..3.0));
            let d = DVector::from_fn(8, |_, _| rng.random_range(-0.1..0.1));
            let blocks: Vec<DMatrix<f64>> = (0..2).map(|_| psd(&mut rng, 4, 50.0) * 1e-3).collect();
            x = (0.004 + 0.7 * x + 0.01 * rng.sample::<f64, _>(StandardNormal)).max(1e-4);
            let y: Vec<f64> = (0..8).map(|i| d[i] + z[(i, 0)] * x + 0.03 * rng.sample::<f64, _>(StandardNormal)).collect();
            hs.push(DMatrix::from_fn(8, 8, |i, j| if i / 4 == j / 4 { blocks[i / 4][(i % 4, j % 4)] } else { 0.0 }));
            meas.push(CCFMeasurement {
                quote_date: day0 + Days::new(t),
                tenor_days: vec![10, 30],
                taus: vec![0.04, 0.12],
                u_grid: vec![1.0, 2.0],
                y,
                h_blocks: blocks,
                forwards: vec![100.0; 2],
                rates: vec![0.0; 2],
                exog: vec![],
            });
            systems.push(SystemMatrices { d, z, transition: tr.clone() });
        }
        let panel = PreparedPanel::new(&meas, 1e-12).unwrap();
        let s = 0.7;
        let collapsed = kalman_pass(&systems, &panel, s, &FilterOptions::default(), None).unwrap().loglik_full;

        let mut xs = DVector::from_element(1, tr.c[0] / (1.0 - tr.t[(0, 0)]));
        let mut pv = DMatrix::from_element(1, 1, tr.variance(&xs)[(0, 0)] / (1.0 - tr.t[(0, 0)].powi(2)));
        let mut full = 0.0;
        for (k, sys) in systems.iter().enumerate() {
            if k > 0 {
                let xf = xs.map(|v| v.max(1e-10));
                pv = &tr.t * &pv * tr.t.transpose() + tr.variance(&xf);
                xs = tr.mean(&xs);
            }
            let v = &panel.dates[k].y - &sys.d - &sys.z * &xs;
            let f = &sys.z * &pv * sys.z.transpose() + &hs[k] * (s * s);
            let finv = f.clone().try_inverse().unwrap();
            full += -0.5 * (8.0 * (2.0 * std::f64::consts::PI).ln() + f.determinant().ln() + v.dot(&(&finv * &v)));
            let kg = &pv * sys.z.transpose() * &finv;
            xs = &xs + &kg * v;
            pv = &pv - &kg * &sys.z * &pv;
        }
        worst = worst.max((collapsed - full).abs());
    }
    Outcome { pass: worst < 1e-8, detail: format!("max |collapsed - full| log-likelihood {worst:.2e} < 1e-8 (p=8, d=1, 3 systems)") }
}

// 6

/// Reference Monte Carlo q10 and q90 of each free parameter (u = 1..20, T = 500).
const BRACKETS: [(&str, f64, f64); 9] = [
    ("sigma", 0.449, 0.461),
    ("kappa", 7.919, 8.389),
    ("vbar", 0.0144, 0.0150),
    ("rho", -0.9707, -0.9430),
    ("delta", 105.192, 116.719),
    ("eta_up", 0.021, 0.022),
    ("eta_dn", 0.047, 0.049),
    ("mu_v", 0.045, 0.047),
    ("sigma_kappa", 0.018, 0.027),
];

fn bracket_reproduction() -> Outcome {
    let cfg = SimConfig { n_dates: 500, replications: 20, seed: 20240601, ..Default::default() };
    let opts = MonteCarloOptions::default();
    let report = monte_carlo(&cfg, &opts).unwrap();
    let mut hits = 0;
    let mut parts = Vec::new();
    for (name, lo, hi) in BRACKETS {
        let s = report.summary.iter().find(|s| s.name == name).unwrap();
        let inside = s.mean >= lo && s.mean <= hi;
        hits += inside as usize;
        parts.push(format!("{name} {:.4}{}", s.mean, if inside { "" } else { "*" }));
    }
    let detail = format!("{hits}/9 means inside q10-q90 brackets, need 7; failed reps {}; {}", report.failed, parts.join(", "));
    Outcome { pass: hits >= 7, detail }
}

// 7

const SWEEP: [f64; 6] = [1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 5e-5];

fn threshold_shape() -> Outcome {
    let cfg = SimConfig { n_dates: 500, replications: 5, seed: 20240602, ..Default::default() };
    let opts = MonteCarloOptions::default();
    let sweep = threshold_sweep(&cfg, &SWEEP, &opts).unwrap();
    let rm: Vec<f64> = sweep.iter().map(|(_, r)| r.rmspe).collect();
    let global = rm.iter().cloned().fold(f64::INFINITY, f64::min);
    let band = sweep.iter().filter(|(s, _)| (1e-7..=1e-6).contains(s)).map(|(_, r)| r.rmspe).fold(f64::INFINITY, f64::min);
    let levels: Vec<String> = sweep.iter().map(|(s, r)| format!("{s:e}:{:.4}", r.rmspe)).collect();
    Outcome { pass: band <= 1.25 * global, detail: format!("band minimum {band:.4} vs global {global:.4} (limit 1.25x); {}", levels.join(" ")) }
}

// 8

fn filtering_quality() -> Outcome {
    let cfg = SimConfig { n_dates: 250, replications: 1, seed: 8, ..Default::default() };
    let opts = MonteCarloOptions::default();
    let (market, mp) = replication_panel(&cfg, 8, &opts).unwrap();
    let panel = PreparedPanel::new(&mp.measurements, 1e-7).unwrap();
    let p = cfg.parameters().unwrap();
    let run = filter_panel(&p, &panel, &FilterOptions::default(), &Default::default()).unwrap();
    let a: Vec<f64> = run.steps.iter().map(|s| s.x_filt[0].max(0.0).sqrt()).collect();
    let b: Vec<f64> = mp.date_index.iter().map(|&t| market.paths.v[t].max(0.0).sqrt()).collect();
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    let corr = cov / (va * vb).sqrt();
    Outcome { pass: corr > 0.95, detail: format!("corr(sqrt x_filt, sqrt v) {corr:.4} > 0.95 over {} dates", a.len()) }
}

// 9

fn error_order() -> Outcome {
    let p = baseline();
    let v = 0.015;
    let tau = 30.0 / 250.0;
    let model = build_model(&p).unwrap();
    let pr = CosPricer::new(&model, tau, &[0.0, v], 4096, 12.0).unwrap();
    let u = [1.0, 5.0, 10.0, 20.0];
    let c = riccati_solve(&model, &u, &[tau]).unwrap();
    let mut errs = Vec::new();
    for oct in 0..5 {
        // n doubles; the moneyness range widens with it so both error parts shrink
        let w = 1.0 + oct as f64;
        let (nlo, nhi) = (20i64 << oct, 8i64 << oct);
        let dm = 0.15 * w / nlo as f64;
        let m: Vec<f64> = (-nlo..=nhi).map(|j| j as f64 * dm).collect();
        let ks: Vec<f64> = m.iter().map(|x| 100.0 * x.exp()).collect();
        let px = pr.otm_prices(&[0.0, v], 100.0, &ks, 0.0).unwrap();
        let phi = span_ccf_grid(&m, &px, &u, tau, 100.0, 0.0);
        errs.push((0..u.len()).map(|i| (phi[i] - c.log_ccf(i, 0, &[0.0, v]).exp()).norm()).fold(0.0, f64::max));
    }
    let monotone = errs.windows(2).all(|w| w[1] < w[0]);
    let shown: Vec<String> = errs.iter().map(|e| format!("{e:.2e}")).collect();
    Outcome { pass: monotone, detail: format!("max error by octave {} (strictly decreasing required)", shown.join(" > ")) }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let slow = args.iter().any(|a| a == "--ignored" || a == "--include-ignored");
    // the harness flags cargo forwards (--quiet, filters) are accepted and ignored
    let mut ok = true;
    ok &= run(1, "heston ccf oracle", Duration::from_secs(1), heston_oracle);
    ok &= run(2, "conditional moments", Duration::from_secs(30), conditional_moments);
    ok &= run(3, "spanning fidelity", Duration::from_secs(60), spanning_fidelity);
    ok &= run(4, "covariance law", Duration::from_secs(120), covariance);
    ok &= run(5, "collapsed filter identity", Duration::from_secs(1), collapsed_identity);
    if slow {
        ok &= run(6, "reference brackets", Duration::from_secs(6 * 3600), bracket_reproduction);
        ok &= run(7, "threshold sweep shape", Duration::from_secs(6 * 3600), threshold_shape);
    } else {
        skip(6, "reference brackets");
        skip(7, "threshold sweep shape");
    }
    ok &= run(8, "filtering quality", Duration::from_secs(300), filtering_quality);
    ok &= run(9, "spanning error order", Duration::from_secs(120), error_order);
    if !ok {
        std::process::exit(1);
    }
}
