//! Synthetic markets: Euler paths under the physical measure, COS option prices, noisy quotes.

use crate::ajd::params::build_unchecked;
use crate::ajd::{admissible, build_pricing_model, AffineModel, ModelTag, ParameterVector, RiccatiOptions};
use crate::ajd::{riccati_solve_with, CCFCoefficients};
use crate::blackscholes::{implied_vol, vega};
use crate::error::{Error, Result};
use crate::surface::{OptionSlice, RawQuote};
use chrono::{Datelike, NaiveDate, Weekday};
use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub model: ModelTag,
    /// Overrides of the model's default parameter values.
    pub params: std::collections::BTreeMap<String, f64>,
    pub n_dates: usize,
    pub dt: f64,
    pub substeps: usize,
    pub f0: f64,
    pub v0: f64,
    pub h0: f64,
    pub rate: f64,
    pub tenors_days: Vec<i64>,
    /// Strike spacing as a fraction of the forward.
    pub strike_step: f64,
    /// Log-moneyness span in units of sigma_ATM sqrt(tau).
    pub m_low_atm: f64,
    pub m_high_atm: f64,
    pub sigma_kappa: f64,
    pub seed: u64,
    pub replications: usize,
    pub start_date: NaiveDate,
    pub cos_terms: usize,
    pub cos_width: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            model: ModelTag::Svcdej,
            params: Default::default(),
            n_dates: 500,
            dt: 1.0 / 250.0,
            substeps: 1,
            f0: 100.0,
            v0: 0.015,
            h0: 1.0,
            rate: 0.0,
            tenors_days: vec![10, 30, 60],
            strike_step: 0.01,
            m_low_atm: -10.0,
            m_high_atm: 4.0,
            sigma_kappa: 0.02,
            seed: 1,
            replications: 1,
            start_date: NaiveDate::from_ymd_opt(2020, 1, 6).unwrap(),
            cos_terms: 1024,
            cos_width: 12.0,
        }
    }
}

impl SimConfig {
    pub fn parameters(&self) -> Result<ParameterVector> {
        let mut p = ParameterVector::defaults(self.model);
        for (k, v) in &self.params {
            p.set(k, *v)?;
        }
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || self.substeps == 0 {
            return Err(Error::Invalid("dt must be positive and substeps at least 1".into()));
        }
        if self.n_dates == 0 || self.replications == 0 {
            return Err(Error::Invalid("n_dates and replications must be at least 1".into()));
        }
        if let Some(t) = self.tenors_days.iter().find(|&&t| t < 2) {
            return Err(Error::Invalid(format!("tenor of {t} days is below the 2-day minimum")));
        }
        if self.tenors_days.is_empty() {
            return Err(Error::Invalid("no tenors".into()));
        }
        if !(self.strike_step > 0.0) || !(self.m_low_atm < 0.0 && self.m_high_atm > 0.0) {
            return Err(Error::Invalid("strike grid needs a positive step and a span around ATM".into()));
        }
        if !(self.sigma_kappa >= 0.0) {
            return Err(Error::Invalid("sigma_kappa must be non-negative".into()));
        }
        let adm = admissible(&self.parameters()?);
        if !adm.ok {
            return Err(Error::Inadmissible(adm.violations));
        }
        Ok(())
    }
}

/// Seed of replication `i`, independent of how replications are scheduled.
pub fn replication_seed(master: u64, i: u64) -> u64 {
    let mut r = ChaCha20Rng::seed_from_u64(master);
    r.set_stream(i);
    r.next_u64()
}

pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date overflow");
    }
    out
}

pub fn add_business_days(d: NaiveDate, n: i64) -> NaiveDate {
    let mut d = d;
    let mut k = 0;
    while k < n {
        d = d.succ_opt().expect("date overflow");
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            k += 1;
        }
    }
    d
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimPaths {
    pub dates: Vec<NaiveDate>,
    pub log_f: Vec<f64>,
    pub v: Vec<f64>,
    /// Exogenous factor path (SVCDEJ-EX), else empty.
    pub h: Vec<f64>,
    /// Jumps since the previous date.
    pub jumps: Vec<u32>,
}

impl SimPaths {
    pub fn state(&self, t: usize) -> Vec<f64> {
        let mut s = vec![self.log_f[t], self.v[t]];
        if !self.h.is_empty() {
            s.push(self.h[t]);
        }
        s
    }
}

/// Lower-triangular factor of a PSD matrix; zero pivots zero their column.
fn psd_factor(a: &[[f64; 4]; 4], n: usize) -> [[f64; 4]; 4] {
    let mut l = [[0.0; 4]; 4];
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= l[j][k] * l[j][k];
        }
        if d <= 1e-300 {
            continue;
        }
        let dj = d.sqrt();
        l[j][j] = dj;
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            l[i][j] = s / dj;
        }
    }
    l
}

/// One full-truncation Euler step of length h with Bernoulli-thinned jumps.
pub fn euler_step(model: &AffineModel, x: &mut [f64], h: f64, rng: &mut dyn RngCore) -> u32 {
    let n = model.dim_state;
    let mut xp = [0.0; 4];
    for i in 0..n {
        xp[i] = if model.latent.contains(&i) { x[i].max(0.0) } else { x[i] };
    }
    let mut cov = [[0.0; 4]; 4];
    for i in 0..n {
        for j in 0..n {
            let mut c = model.h0[(i, j)];
            for (k, h1) in model.h1.iter().enumerate() {
                c += h1[(i, j)] * xp[k];
            }
            cov[i][j] = c;
        }
    }
    let l = psd_factor(&cov, n);
    let mut z = [0.0; 4];
    for zi in z.iter_mut().take(n) {
        *zi = StandardNormal.sample_rng(rng);
    }
    let sh = h.sqrt();
    let mut dx = [0.0; 4];
    for i in 0..n {
        let mut drift = model.k0[i];
        for j in 0..n {
            drift += model.k1[(i, j)] * xp[j];
        }
        let mut diff = 0.0;
        for j in 0..=i {
            diff += l[i][j] * z[j];
        }
        dx[i] = drift * h + diff * sh;
    }
    let mut count = 0;
    for jc in &model.jumps {
        let mut lam = jc.l0;
        for (a, b) in jc.l1.iter().zip(&xp) {
            lam += a * b;
        }
        let u: f64 = rand::Rng::random(&mut RngAdapter(rng));
        if u < lam * h {
            let j = jc.transform.sample(rng);
            for i in 0..n {
                dx[i] += j[i];
            }
            count += 1;
        }
    }
    for i in 0..n {
        x[i] += dx[i];
    }
    count
}

struct RngAdapter<'a>(&'a mut dyn RngCore);

impl RngCore for RngAdapter<'_> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

trait SampleRng {
    fn sample_rng(self, rng: &mut dyn RngCore) -> f64;
}

impl SampleRng for StandardNormal {
    fn sample_rng(self, rng: &mut dyn RngCore) -> f64 {
        RngAdapter(rng).sample(self)
    }
}

/// Simulation dynamics: physical drift, and the exogenous factor's own dynamics when present.
pub fn simulation_model(p: &ParameterVector) -> AffineModel {
    let pi_v = p.try_get("pi_v").unwrap_or(0.0);
    build_unchecked(p, p.tag == ModelTag::SvcdejEx, pi_v)
}

pub fn euler_simulate(cfg: &SimConfig, seed: u64) -> Result<SimPaths> {
    cfg.validate()?;
    let p = cfg.parameters()?;
    let model = simulation_model(&p);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let ex = p.tag == ModelTag::SvcdejEx;
    let mut x = vec![cfg.f0.ln(), cfg.v0];
    if ex {
        x.push(cfg.h0);
    }
    let dates = business_days(cfg.start_date, cfg.n_dates);
    let mut paths = SimPaths {
        dates,
        log_f: vec![x[0]],
        v: vec![x[1]],
        h: if ex { vec![x[2]] } else { vec![] },
        jumps: vec![0],
    };
    let h = cfg.dt / cfg.substeps as f64;
    for _ in 1..cfg.n_dates {
        let mut count = 0;
        for _ in 0..cfg.substeps {
            count += euler_step(&model, &mut x, h, &mut rng);
        }
        paths.log_f.push(x[0]);
        paths.v.push(x[1]);
        if ex {
            paths.h.push(x[2]);
        }
        paths.jumps.push(count);
    }
    Ok(paths)
}

/// COS expansion for one maturity with a fixed truncation range.
#[derive(Debug, Clone)]
pub struct CosPricer {
    pub tau: f64,
    pub a: f64,
    pub b: f64,
    coeffs: CCFCoefficients,
    /// Put payoff coefficients per unit strike.
    put_u: Vec<f64>,
}

/// Cumulants c1, c2, c4 of the log-return from fixed-step central differences of log phi at u = 0.
pub fn return_cumulants(model: &AffineModel, state: &[f64], tau: f64) -> Result<(f64, f64, f64)> {
    let h = 0.05;
    let us = [-2.0 * h, -h, h, 2.0 * h];
    let c = riccati_solve_with(model, &us, &[tau], &RiccatiOptions::fixed(400))?;
    let f: Vec<Complex64> = (0..4).map(|i| c.log_ccf(i, 0, state)).collect();
    let d1 = (f[2] - f[1]) / (2.0 * h);
    let d2 = (f[2] + f[1]) / (h * h);
    let d4 = (f[3] - 4.0 * f[2] - 4.0 * f[1] + f[0]) / h.powi(4);
    Ok((d1.im, -d2.re, d4.re))
}

impl CosPricer {
    /// Range from cumulants at `range_state`; `model` must have rate 0.
    pub fn new(model: &AffineModel, tau: f64, range_state: &[f64], n_terms: usize, width: f64) -> Result<Self> {
        let (c1, c2, c4) = return_cumulants(model, range_state, tau)?;
        let half = width * (c2.abs() + c4.abs().sqrt()).sqrt();
        let (a, b) = (c1 - half, c1 + half);
        let u: Vec<f64> = (0..n_terms).map(|k| k as f64 * PI / (b - a)).collect();
        let coeffs = riccati_solve_with(model, &u, &[tau], &RiccatiOptions::default())?;
        let put_u = (0..n_terms)
            .map(|k| {
                let w = k as f64 * PI / (b - a);
                // chi_k(a, 0) and psi_k(a, 0)
                let chi = ((-a * w).cos() - (a - a).cos() * a.exp() + w * (-a * w).sin()) / (1.0 + w * w);
                let psi = if k == 0 { -a } else { (-a * w).sin() / w };
                2.0 / (b - a) * (psi - chi)
            })
            .collect();
        Ok(CosPricer { tau, a, b, coeffs, put_u })
    }

    pub fn n_terms(&self) -> usize {
        self.put_u.len()
    }

    /// Undiscounted CCF values on the expansion grid at a state.
    fn phi(&self, state: &[f64]) -> Vec<Complex64> {
        (0..self.put_u.len()).map(|k| self.coeffs.log_ccf(k, 0, state).exp()).collect()
    }

    /// OTM prices (puts for K <= F, calls above). Fails if the last term is not negligible.
    pub fn otm_prices(&self, state: &[f64], f: f64, strikes: &[f64], r: f64) -> Result<Vec<f64>> {
        let phi = self.phi(state);
        let tail = phi.last().map(|z| z.norm()).unwrap_or(0.0);
        if !(tail < 1e-12) {
            return Err(Error::CosOrder(tail));
        }
        let df = (-r * self.tau).exp();
        let w = PI / (self.b - self.a);
        Ok(strikes
            .iter()
            .map(|&k| {
                let x = (f / k).ln();
                // strikes outside the truncated support: no put value below, pure intrinsic above
                if -x <= self.a {
                    return 0.0;
                }
                if -x >= self.b {
                    return if k > f { 0.0 } else { df * (k - f) };
                }
                let rot = Complex64::from_polar(1.0, w * (x - self.a));
                let mut z = Complex64::new(1.0, 0.0);
                let mut s = 0.0;
                for (j, (p, v)) in phi.iter().zip(&self.put_u).enumerate() {
                    let term = (p * z).re * v;
                    s += if j == 0 { 0.5 * term } else { term };
                    z *= rot;
                }
                let put = (df * k * s).max(0.0);
                if k > f {
                    (put + df * (f - k)).max(0.0)
                } else {
                    put
                }
            })
            .collect())
    }
}

/// COS prices of OTM options with the range taken at the pricing state.
pub fn cos_price(model: &AffineModel, state: &[f64], f: f64, strikes: &[f64], tau: f64, r: f64) -> Result<Vec<f64>> {
    let mut n = 1024;
    loop {
        let pr = CosPricer::new(model, tau, state, n, 12.0)?;
        match pr.otm_prices(state, f, strikes, r) {
            Err(Error::CosOrder(_)) if n < 1 << 15 => n *= 2,
            other => return other,
        }
    }
}

/// One simulated option.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthQuote {
    pub strike: f64,
    pub is_call: bool,
    pub price: f64,
    pub noisy: f64,
    pub bsiv: f64,
    pub vega: f64,
    pub floored: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSlice {
    pub quote_date: NaiveDate,
    pub expiry_date: NaiveDate,
    pub tenor_days: i64,
    pub tau: f64,
    pub forward: f64,
    pub rate: f64,
    pub sigma_atm: f64,
    /// OTM options on the strike grid.
    pub otm: Vec<SynthQuote>,
    /// The other side of each strike (ITM), kept for parity-based ingestion.
    pub itm: Vec<SynthQuote>,
}

impl SynthSlice {
    pub fn otm_slice(&self, noisy: bool) -> (OptionSlice, usize) {
        let pts: Vec<(f64, f64, Option<u64>)> = self.otm.iter().map(|q| (q.strike, if noisy { q.noisy } else { q.price }, None)).collect();
        OptionSlice::from_otm_prices(self.quote_date, self.expiry_date, self.tenor_days, self.tau, self.forward, self.rate, &pts)
    }

    pub fn raw_quotes(&self) -> Vec<RawQuote> {
        self.otm
            .iter()
            .chain(&self.itm)
            .map(|q| RawQuote {
                quote_date: self.quote_date,
                expiry_date: self.expiry_date,
                is_call: q.is_call,
                strike: q.strike,
                bid: q.noisy,
                ask: q.noisy,
                volume: None,
                settlement: None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMarket {
    pub paths: SimPaths,
    pub tenors_days: Vec<i64>,
    /// Per date, one slice per tenor.
    pub slices: Vec<Vec<SynthSlice>>,
    pub floored: usize,
}

/// Price floor for negative noisy prices (one tick).
pub const TICK: f64 = 0.05;

/// Builds per-tenor pricers valid for every state on the path.
pub fn path_pricers(cfg: &SimConfig, paths: &SimPaths) -> Result<Vec<CosPricer>> {
    let p = cfg.parameters()?;
    let model = build_pricing_model(&p)?;
    let tmax = (0..paths.v.len()).max_by(|&a, &b| paths.v[a].total_cmp(&paths.v[b])).unwrap_or(0);
    let tmin = (0..paths.v.len()).min_by(|&a, &b| paths.v[a].total_cmp(&paths.v[b])).unwrap_or(0);
    let mut wide = paths.state(tmax);
    wide[0] = 0.0;
    let mut narrow = paths.state(tmin);
    narrow[0] = 0.0;
    narrow[1] = narrow[1].max(0.0);
    cfg.tenors_days
        .iter()
        .map(|&d| {
            let tau = d as f64 / 250.0;
            let mut n = cfg.cos_terms;
            loop {
                let pr = CosPricer::new(&model, tau, &wide, n, cfg.cos_width)?;
                let tail = pr.phi(&narrow).last().map(|z| z.norm()).unwrap_or(0.0);
                if tail < 1e-12 || n >= 1 << 15 {
                    return Ok(pr);
                }
                n *= 2;
            }
        })
        .collect()
}

/// Strike grid, COS prices, greeks and Gaussian noise per date and tenor.
pub fn synth_market(paths: SimPaths, cfg: &SimConfig, seed: u64) -> Result<SyntheticMarket> {
    let pricers = path_pricers(cfg, &paths)?;
    let mut noise_rng = ChaCha20Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut slices = Vec::with_capacity(paths.dates.len());
    let mut floored = 0;
    for t in 0..paths.dates.len() {
        let f = paths.log_f[t].exp();
        let mut state = paths.state(t);
        state[0] = 0.0;
        state[1] = state[1].max(0.0);
        let mut day = Vec::with_capacity(pricers.len());
        for (pr, &days) in pricers.iter().zip(&cfg.tenors_days) {
            let tau = pr.tau;
            let r = cfg.rate;
            let atm = pr.otm_prices(&state, f, &[f], r)?[0];
            let sigma_atm = implied_vol(atm, f, f, tau, r, false)?;
            let span = sigma_atm * tau.sqrt();
            let (m_lo, m_hi) = (cfg.m_low_atm * span, cfg.m_high_atm * span);
            let dk = cfg.strike_step * f;
            let j_lo = ((f * m_lo.exp() - f) / dk).ceil() as i64;
            let j_hi = ((f * m_hi.exp() - f) / dk).floor() as i64;
            let strikes: Vec<f64> = (j_lo..=j_hi).map(|j| f + j as f64 * dk).filter(|&k| k > 0.0).collect();
            let prices = pr.otm_prices(&state, f, &strikes, r)?;
            let df = (-r * tau).exp();
            let mut otm = Vec::with_capacity(strikes.len());
            let mut itm = Vec::with_capacity(strikes.len());
            for (&k, &price) in strikes.iter().zip(&prices) {
                let is_call = k > f;
                let other = if is_call { price - df * (f - k) } else { price + df * (f - k) };
                for (side, px, out) in [(is_call, price, &mut otm), (!is_call, other, &mut itm)] {
                    let (bsiv, vg) = match implied_vol(px, f, k, tau, r, side) {
                        Ok(s) => (s, vega(f, k, tau, r, s)),
                        Err(_) => (f64::NAN, f64::NAN),
                    };
                    let eps: f64 = noise_rng.sample(StandardNormal);
                    let mut noisy = if cfg.sigma_kappa == 0.0 || !vg.is_finite() { px } else { px + cfg.sigma_kappa * bsiv * vg * eps };
                    let fl = noisy < 0.0;
                    if fl {
                        noisy = TICK;
                        floored += 1;
                    }
                    out.push(SynthQuote { strike: k, is_call: side, price: px, noisy, bsiv, vega: vg, floored: fl });
                }
            }
            day.push(SynthSlice {
                quote_date: paths.dates[t],
                expiry_date: add_business_days(paths.dates[t], days),
                tenor_days: days,
                tau,
                forward: f,
                rate: r,
                sigma_atm,
                otm,
                itm,
            });
        }
        slices.push(day);
    }
    Ok(SyntheticMarket { paths, tenors_days: cfg.tenors_days.clone(), slices, floored })
}
