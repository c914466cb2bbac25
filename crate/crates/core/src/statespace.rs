//! Linear state-space form of the log-CCF panel and the collapsed, modified Kalman filter.

use crate::ajd::params::build_unchecked;
use crate::ajd::{build_model, AffineModel, riccati_solve_with, transition_coeffs, CCFCoefficients, ConditionalMomentCoeffs, ParameterVector, RiccatiOptions};
use crate::error::{Error, Result};
use crate::linalg::{pseudo_inverse, spd_inverse, stationary_covariance};
use crate::spanning::CCFMeasurement;
use crate::surface::weekdays_between;
use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Trading days per year for transition steps.
pub const TRADING_DAYS: f64 = 250.0;

/// How the sigma_kappa scale enters the log-likelihood normalisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScalePenalty {
    /// p_t log sigma_kappa per date.
    #[default]
    Dimension,
    /// retained rank of the pseudo-inverted H-tilde per date.
    Rank,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterOptions {
    pub sbar: f64,
    pub state_floor: f64,
    pub scale_penalty: ScalePenalty,
}

impl Default for FilterOptions {
    fn default() -> Self {
        FilterOptions { sbar: 1e-7, state_floor: 1e-10, scale_penalty: ScalePenalty::Dimension }
    }
}

/// One panel date with its theta-independent pseudo-inverted noise blocks.
#[derive(Debug, Clone)]
pub struct PreparedDate {
    pub quote_date: NaiveDate,
    /// Step from the previous date in years (first date: one trading day).
    pub dt: f64,
    pub taus: Vec<f64>,
    pub rates: Vec<f64>,
    pub y: DVector<f64>,
    pub block_dim: usize,
    pub hinv: Vec<DMatrix<f64>>,
    /// Sum over blocks of log pseudo-determinants of H-tilde.
    pub log_pdet: f64,
    pub rank: usize,
    pub exog: Vec<f64>,
}

impl PreparedDate {
    pub fn new(m: &CCFMeasurement, dt: f64, sbar: f64) -> Result<Self> {
        let mut hinv = Vec::with_capacity(m.h_blocks.len());
        let (mut log_pdet, mut rank) = (0.0, 0);
        for h in &m.h_blocks {
            let pi = pseudo_inverse(h, sbar)?;
            log_pdet += pi.log_pseudo_det;
            rank += pi.rank;
            hinv.push(pi.inverse);
        }
        if m.y.len() != m.block_dim() * m.h_blocks.len() || m.taus.len() != m.h_blocks.len() {
            return Err(Error::Invalid(format!("measurement on {} has inconsistent dimensions", m.quote_date)));
        }
        Ok(PreparedDate {
            quote_date: m.quote_date,
            dt,
            taus: m.taus.clone(),
            rates: m.rates.clone(),
            y: DVector::from_column_slice(&m.y),
            block_dim: m.block_dim(),
            hinv,
            log_pdet,
            rank,
            exog: m.exog.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }
}

/// Panel of dates with a shared u grid.
#[derive(Debug, Clone)]
pub struct PreparedPanel {
    pub u_grid: Vec<f64>,
    pub dates: Vec<PreparedDate>,
    pub sbar: f64,
}

impl PreparedPanel {
    /// Dates must be in increasing order; transition steps are weekday gaps / 250.
    pub fn new(measurements: &[CCFMeasurement], sbar: f64) -> Result<Self> {
        let first = measurements.first().ok_or_else(|| Error::Empty("measurement panel".into()))?;
        let u_grid = first.u_grid.clone();
        let dates = measurements
            .par_iter()
            .enumerate()
            .map(|(t, m)| {
                if m.u_grid != u_grid {
                    return Err(Error::Invalid(format!("u grid differs on {}", m.quote_date)));
                }
                let dt = if t == 0 {
                    1.0 / TRADING_DAYS
                } else {
                    let prev = measurements[t - 1].quote_date;
                    if m.quote_date <= prev {
                        return Err(Error::Invalid(format!("panel dates not increasing at {}", m.quote_date)));
                    }
                    weekdays_between(prev, m.quote_date).max(1) as f64 / TRADING_DAYS
                };
                PreparedDate::new(m, dt, sbar)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedPanel { u_grid, dates, sbar })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Sorted distinct maturities across the panel.
    pub fn tau_union(&self) -> Vec<f64> {
        let mut taus: Vec<f64> = self.dates.iter().flat_map(|d| d.taus.iter().copied()).collect();
        taus.sort_by(f64::total_cmp);
        taus.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
        taus
    }
}

/// Observation and transition matrices of one date.
#[derive(Debug, Clone)]
pub struct SystemMatrices {
    pub d: DVector<f64>,
    pub z: DMatrix<f64>,
    /// Transition from the previous date into this one.
    pub transition: ConditionalMomentCoeffs,
}

fn full_state(model_dim: usize, latent: &[usize], exog: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0; model_dim];
    let mut e = exog.iter();
    for (i, v) in s.iter_mut().enumerate().skip(1) {
        if !latent.contains(&i) {
            *v = e.next().copied().unwrap_or(0.0);
        }
    }
    s
}

/// Loadings for one date from solved CCF coefficients.
pub fn observation_matrices(coeffs: &CCFCoefficients, latent: &[usize], observed: &[usize], date: &PreparedDate) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let q = coeffs.u_grid.len();
    let k = date.taus.len();
    let dl = latent.len();
    let mut d = DVector::zeros(2 * q * k);
    let mut z = DMatrix::zeros(2 * q * k, dl);
    let state = full_state(coeffs.dim, latent, &date.exog);
    for (j, (&tau, &r)) in date.taus.iter().zip(&date.rates).enumerate() {
        let it = coeffs
            .tau_grid
            .iter()
            .position(|&x| (x - tau).abs() <= 1e-12 * tau.max(1.0))
            .ok_or(Error::OffGrid { u: coeffs.u_grid[0], tau })?;
        let base = 2 * q * j;
        for iu in 0..q {
            let bt = coeffs.beta_tilde(iu, it);
            let mut a = coeffs.alpha(iu, it) - r * tau;
            for &o in observed {
                a += bt[o] * state[o];
            }
            d[base + iu] = a.re;
            d[base + q + iu] = a.im;
            for (c, &l) in latent.iter().enumerate() {
                z[(base + iu, c)] = bt[l].re;
                z[(base + q + iu, c)] = bt[l].im;
            }
        }
    }
    Ok((d, z))
}

/// Solves the Riccati system once over the panel's maturities and assembles every date.
pub fn build_system(params: &ParameterVector, panel: &PreparedPanel, ropts: &RiccatiOptions) -> Result<Vec<SystemMatrices>> {
    let model = build_model(params)?;
    system_from_model(&model, params, panel, ropts)
}

/// Same as `build_system` but only checks parameter domains, so points that violate
/// the Feller or stationarity margins can still be scored by a penalized objective.
pub(crate) fn build_system_unchecked(params: &ParameterVector, panel: &PreparedPanel, ropts: &RiccatiOptions) -> Result<Vec<SystemMatrices>> {
    let bad = params.domain_violations();
    if !bad.is_empty() {
        return Err(Error::Inadmissible(bad));
    }
    let model = build_unchecked(params, false, 0.0);
    system_from_model(&model, params, panel, ropts)
}

fn system_from_model(model: &AffineModel, params: &ParameterVector, panel: &PreparedPanel, ropts: &RiccatiOptions) -> Result<Vec<SystemMatrices>> {
    let taus = panel.tau_union();
    let coeffs = riccati_solve_with(model, &panel.u_grid, &taus, ropts)?;
    let latent = model.latent.clone();
    let observed = model.observed();
    panel
        .dates
        .iter()
        .enumerate()
        .map(|(t, date)| {
            let (d, z) = observation_matrices(&coeffs, &latent, &observed, date).map_err(|e| Error::Invalid(format!("{}: {e}", date.quote_date)))?;
            let prev = if t == 0 { date } else { &panel.dates[t - 1] };
            let state = full_state(model.dim_state, &latent, &prev.exog);
            let transition = transition_coeffs(params, date.dt, &state)?;
            Ok(SystemMatrices { d, z, transition })
        })
        .collect()
}

/// Projection of one observation onto the latent dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Collapsed {
    pub y_star: DVector<f64>,
    pub d_star: DVector<f64>,
    pub h_star: DMatrix<f64>,
    pub log_det_h_star: f64,
    /// e' H^- e with e the GLS residual.
    pub gls_quad: f64,
}

/// Collapse with a block-diagonal H^- given as consecutive diagonal blocks.
pub fn collapse(y: &DVector<f64>, d: &DVector<f64>, z: &DMatrix<f64>, hinv_blocks: &[DMatrix<f64>]) -> Result<Collapsed> {
    let dl = z.ncols();
    let mut s = DMatrix::zeros(dl, dl);
    let mut gy = DVector::zeros(dl);
    let mut gd = DVector::zeros(dl);
    let mut rr = 0.0;
    let mut off = 0;
    for hb in hinv_blocks {
        let n = hb.nrows();
        let zb = z.rows(off, n);
        let yb = y.rows(off, n);
        let db = d.rows(off, n);
        let hz = hb * zb;
        s += zb.transpose() * &hz;
        gy += hz.transpose() * yb;
        gd += hz.transpose() * db;
        let rb = yb - db;
        rr += rb.dot(&(hb * &rb));
        off += n;
    }
    if off != y.len() {
        return Err(Error::Invalid("noise blocks do not cover the observation".into()));
    }
    let s = (&s + s.transpose()) * 0.5;
    let (h_star, log_det_s) = spd_inverse(&s).ok_or_else(|| {
        let eig = s.clone().symmetric_eigen();
        let top = eig.eigenvalues.amax();
        let observed = eig.eigenvalues.iter().filter(|&&l| l > 1e-12 * top).count();
        Error::Rank { observed, expected: dl }
    })?;
    let y_star = &h_star * &gy;
    let d_star = &h_star * &gd;
    let g = &gy - &gd;
    let gls_quad = (rr - g.dot(&(&h_star * &g))).max(0.0);
    Ok(Collapsed { y_star, d_star, h_star, log_det_h_star: -log_det_s, gls_quad })
}

/// Per-date filter output.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterStep {
    pub quote_date: NaiveDate,
    pub x_pred: DVector<f64>,
    pub p_pred: DMatrix<f64>,
    pub x_filt: DVector<f64>,
    pub p_filt: DMatrix<f64>,
    pub omega: DVector<f64>,
    pub g: DMatrix<f64>,
    pub gls_quad: f64,
    pub log_det_h_star: f64,
    /// Proportional log-likelihood contribution.
    pub loglik: f64,
    /// Contribution including 2 pi and log|H-tilde| constants.
    pub loglik_full: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterRun {
    pub steps: Vec<FilterStep>,
    pub loglik: f64,
    pub loglik_full: f64,
}

/// Unconditional mean and variance of the transition at a floored mean.
pub fn stationary_init(tr: &ConditionalMomentCoeffs, floor: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = tr.c.len();
    let a = DMatrix::identity(n, n) - &tr.t;
    let x = a.lu().solve(&tr.c).ok_or_else(|| Error::Invalid("transition has a unit root; no stationary start".into()))?;
    let xf = x.map(|v| v.max(floor));
    let p = stationary_covariance(&tr.t, &tr.variance(&xf)).ok_or_else(|| Error::Invalid("no stationary covariance".into()))?;
    Ok((x, p))
}

/// Collapsed modified Kalman recursions with H = sigma_kappa^2 H-tilde.
pub fn kalman_pass(systems: &[SystemMatrices], panel: &PreparedPanel, sigma_kappa: f64, opts: &FilterOptions, init: Option<(DVector<f64>, DMatrix<f64>)>) -> Result<FilterRun> {
    if !(sigma_kappa > 0.0) {
        return Err(Error::Parameter("sigma_kappa must be positive".into()));
    }
    if systems.len() != panel.dates.len() || systems.is_empty() {
        return Err(Error::Invalid("system and panel lengths differ".into()));
    }
    let s2 = sigma_kappa * sigma_kappa;
    let (mut x, mut p) = match init {
        Some(v) => v,
        None => stationary_init(&systems[0].transition, opts.state_floor)?,
    };
    let dl = x.len();
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let mut steps = Vec::with_capacity(systems.len());
    let (mut total, mut total_full) = (0.0, 0.0);
    for (t, (sys, date)) in systems.iter().zip(&panel.dates).enumerate() {
        if t > 0 {
            let xf = x.map(|v| v.max(opts.state_floor));
            let q = sys.transition.variance(&xf);
            let pn = &sys.transition.t * &p * sys.transition.t.transpose() + q;
            x = sys.transition.mean(&x);
            p = (&pn + pn.transpose()) * 0.5;
        }
        let c = collapse(&date.y, &sys.d, &sys.z, &date.hinv).map_err(|e| match e {
            Error::Rank { .. } => e,
            other => Error::Invalid(format!("{}: {other}", date.quote_date)),
        })?;
        let h_star = &c.h_star * s2;
        let log_det_h_star = c.log_det_h_star + dl as f64 * s2.ln();
        let gls_quad = c.gls_quad / s2;
        let omega = &c.y_star - &c.d_star - &x;
        let g = &p + &h_star;
        let g = (&g + g.transpose()) * 0.5;
        let (ginv, log_det_g) = spd_inverse(&g).ok_or(Error::NonFinite(t))?;
        let quad = omega.dot(&(&ginv * &omega));
        let pdim = match opts.scale_penalty {
            ScalePenalty::Dimension => date.dim(),
            ScalePenalty::Rank => date.rank,
        } as f64;
        let ll = 0.5 * (-log_det_g - quad - gls_quad + log_det_h_star) - pdim * sigma_kappa.ln();
        // |H| = |H*| |H+| with |A| = 1: full Gaussian loglik over the retained rank.
        let ll_full = -0.5 * (date.rank as f64 * ln2pi + log_det_g + quad + gls_quad + date.log_pdet + date.rank as f64 * s2.ln() - log_det_h_star);
        if !ll.is_finite() {
            return Err(Error::NonFinite(t));
        }
        let x_pred = x.clone();
        let p_pred = p.clone();
        let k = &p * &ginv;
        x = &x + &k * &omega;
        let pf = &p - &k * &p;
        p = (&pf + pf.transpose()) * 0.5;
        total += ll;
        total_full += ll_full;
        steps.push(FilterStep {
            quote_date: date.quote_date,
            x_pred,
            p_pred,
            x_filt: x.clone(),
            p_filt: p.clone(),
            omega,
            g,
            gls_quad,
            log_det_h_star,
            loglik: ll,
            loglik_full: ll_full,
        });
    }
    Ok(FilterRun { steps, loglik: total, loglik_full: total_full })
}

/// Builds the system at theta and filters; the QML objective is `run.loglik`.
pub fn filter_panel(params: &ParameterVector, panel: &PreparedPanel, opts: &FilterOptions, ropts: &RiccatiOptions) -> Result<FilterRun> {
    let sys = build_system(params, panel, ropts)?;
    kalman_pass(&sys, panel, params.sigma_kappa(), opts, None)
}
