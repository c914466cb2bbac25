#![allow(dead_code)]

use ccfilter_core::ajd::{build_model, AffineModel, ModelTag, ParameterVector};
use num_complex::Complex64;

pub const TAUS: [f64; 3] = [10.0 / 250.0, 30.0 / 250.0, 60.0 / 250.0];

pub fn baseline() -> ParameterVector {
    ParameterVector::defaults(ModelTag::Svcdej)
}

/// SVCDEJ with the jump part removed.
pub fn heston_model(r: f64) -> AffineModel {
    let mut m = build_model(&baseline()).unwrap().with_rate(r);
    m.jumps.clear();
    m.k1[(0, 1)] = -0.5;
    m
}

/// Closed-form Heston log-CCF coefficients (C, D) of log(F_T/F_t), discounted.
pub fn heston_cd(u: f64, tau: f64, kappa: f64, vbar: f64, sigma: f64, rho: f64, r: f64) -> (Complex64, Complex64) {
    heston_cd_c(Complex64::new(u, 0.0), tau, kappa, vbar, sigma, rho, r)
}

pub fn heston_cd_c(u: Complex64, tau: f64, kappa: f64, vbar: f64, sigma: f64, rho: f64, r: f64) -> (Complex64, Complex64) {
    let i = Complex64::new(0.0, 1.0);
    let iu = i * u;
    let xi = kappa - rho * sigma * iu;
    let d = (xi * xi + sigma * sigma * (iu + u * u)).sqrt();
    let g = (xi - d) / (xi + d);
    let e = (-d * tau).exp();
    let dd = (xi - d) / (sigma * sigma) * (1.0 - e) / (1.0 - g * e);
    let cc = kappa * vbar / (sigma * sigma) * ((xi - d) * tau - 2.0 * ((1.0 - g * e) / (1.0 - g)).ln()) - r * tau;
    (cc, dd)
}

/// Damped Fourier integral for a Heston OTM option (call damping above F, put damping below),
/// composite Simpson on [0, 3000].
pub fn heston_otm_quadrature(f: f64, k: f64, v: f64, tau: f64, r: f64, kappa: f64, vbar: f64, sigma: f64, rho: f64) -> f64 {
    let alpha = if k > f { 1.5 } else { -2.5 };
    let i = Complex64::new(0.0, 1.0);
    let lk = (k / f).ln();
    let integrand = |u: f64| {
        let z = Complex64::new(u, -(alpha + 1.0));
        let (c, d) = heston_cd_c(z, tau, kappa, vbar, sigma, rho, r);
        let phi = (c + d * v).exp();
        let den = Complex64::new(alpha * alpha + alpha - u * u, (2.0 * alpha + 1.0) * u);
        ((-i * u * lk).exp() * phi / den).re
    };
    let (n, top) = (600_000, 3000.0);
    let h = top / n as f64;
    let mut s = integrand(0.0) + integrand(top);
    for j in 1..n {
        s += integrand(j as f64 * h) * if j % 2 == 1 { 4.0 } else { 2.0 };
    }
    f * (-alpha * lk).exp() / std::f64::consts::PI * s * h / 3.0
}

use ccfilter_core::blackscholes::{implied_vol, vega};
use ccfilter_core::simulate::CosPricer;
use ccfilter_core::surface::OptionSlice;
use chrono::NaiveDate;

pub fn day() -> NaiveDate {
    NaiveDate::from_ymd_opt(2021, 1, 4).unwrap()
}

/// Noiseless SVCDEJ quotes on a strike grid spanning [-10, 4] ATM-vol units, F = 100, r = 0.
pub struct ModelSlice {
    pub tau: f64,
    pub forward: f64,
    pub strikes: Vec<f64>,
    pub prices: Vec<f64>,
    pub bsiv: Vec<f64>,
    pub vega: Vec<f64>,
}

pub fn model_slice(p: &ParameterVector, days: i64, v: f64, step: f64) -> ModelSlice {
    let model = build_model(p).unwrap();
    let tau = days as f64 / 250.0;
    let f = 100.0;
    let pr = CosPricer::new(&model, tau, &[0.0, v], 4096, 12.0).unwrap();
    let atm = pr.otm_prices(&[0.0, v], f, &[f], 0.0).unwrap()[0];
    let span = implied_vol(atm, f, f, tau, 0.0, false).unwrap() * tau.sqrt();
    let j_lo = ((f * (-10.0 * span).exp() - f) / (step * f)).ceil() as i64;
    let j_hi = ((f * (4.0 * span).exp() - f) / (step * f)).floor() as i64;
    let strikes: Vec<f64> = (j_lo..=j_hi).map(|j| f + j as f64 * step * f).collect();
    let prices = pr.otm_prices(&[0.0, v], f, &strikes, 0.0).unwrap();
    let bsiv: Vec<f64> = strikes.iter().zip(&prices).map(|(&k, &px)| implied_vol(px, f, k, tau, 0.0, k > f).unwrap()).collect();
    let vega = strikes.iter().zip(&bsiv).map(|(&k, &s)| vega(f, k, tau, 0.0, s)).collect();
    ModelSlice { tau, forward: f, strikes, prices, bsiv, vega }
}

impl ModelSlice {
    pub fn slice(&self, days: i64, prices: &[f64]) -> OptionSlice {
        let pts: Vec<_> = self.strikes.iter().zip(prices).map(|(&k, &p)| (k, p, None)).collect();
        OptionSlice::from_otm_prices(day(), day(), days, self.tau, self.forward, 0.0, &pts).0
    }

    pub fn m(&self) -> Vec<f64> {
        self.strikes.iter().map(|k| (k / self.forward).ln()).collect()
    }
}
