//! Option-spanned CCF, continuous complex log, and measurement-error covariance blocks.

use crate::ajd::moments::psd_clip;
use crate::blackscholes::bs_price;
use crate::error::{Error, Result};
use crate::surface::{evaluate_surface, PreparedSurface};
use chrono::NaiveDate;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Nodes used for the measurement covariance sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceGrid {
    /// Observed quote strikes, with surface-implied greeks.
    #[default]
    Quotes,
    /// The interpolated summation grid.
    Summation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpanOptions {
    pub dm: f64,
    pub m_min: f64,
    pub m_max: f64,
    pub covariance_grid: CovarianceGrid,
}

impl Default for SpanOptions {
    fn default() -> Self {
        SpanOptions { dm: 1e-4, m_min: -6.0, m_max: 2.0, covariance_grid: CovarianceGrid::Quotes }
    }
}

/// e^{i u_k m} for all k at one node, via a rotation recurrence when the grid is arithmetic.
struct Harmonics {
    u: Vec<f64>,
    step: Option<f64>,
}

impl Harmonics {
    fn new(u: &[f64]) -> Self {
        let step = if u.len() >= 2 {
            let d = u[1] - u[0];
            let arith = u.windows(2).all(|w| ((w[1] - w[0]) - d).abs() <= 1e-12 * (1.0 + d.abs()));
            arith.then_some(d)
        } else {
            None
        };
        Harmonics { u: u.to_vec(), step }
    }

    #[inline]
    fn fill(&self, m: f64, out: &mut [Complex64]) {
        match self.step {
            Some(d) => {
                let mut z = Complex64::from_polar(1.0, self.u[0] * m);
                let r = Complex64::from_polar(1.0, d * m);
                for o in out.iter_mut() {
                    *o = z;
                    z *= r;
                }
            }
            None => {
                for (o, &u) in out.iter_mut().zip(&self.u) {
                    *o = Complex64::from_polar(1.0, u * m);
                }
            }
        }
    }
}

fn u_t(u: f64, f: f64) -> Complex64 {
    Complex64::new(u * u, u) / f
}

/// Riemann sum over a discrete grid of OTM prices. Node 0 only anchors the first spacing.
pub fn span_ccf_grid(m: &[f64], prices: &[f64], u_grid: &[f64], tau: f64, f: f64, r: f64) -> Vec<Complex64> {
    let q = u_grid.len();
    let h = Harmonics::new(u_grid);
    let mut acc = vec![Complex64::new(0.0, 0.0); q];
    let mut z = vec![Complex64::new(0.0, 0.0); q];
    for j in 1..m.len() {
        let w = (-m[j]).exp() * prices[j] * (m[j] - m[j - 1]);
        if w == 0.0 {
            continue;
        }
        h.fill(m[j], &mut z);
        for (a, zz) in acc.iter_mut().zip(&z) {
            *a += zz * w;
        }
    }
    let df = (-r * tau).exp();
    u_grid.iter().zip(acc).map(|(&u, s)| df - u_t(u, f) * s).collect()
}

/// Equally spaced summation grid with the surface's OTM prices.
#[derive(Debug, Clone)]
pub struct SpanGrid {
    pub m: Vec<f64>,
    pub price: Vec<f64>,
    pub bsiv: Vec<f64>,
}

pub fn summation_grid(ps: &PreparedSurface, opts: &SpanOptions) -> Result<SpanGrid> {
    if !(opts.dm > 0.0) || !(opts.m_max > opts.m_min) {
        return Err(Error::Invalid("spanning grid needs dm > 0 and m_max > m_min".into()));
    }
    let n = ((opts.m_max - opts.m_min) / opts.dm).round() as usize;
    let mut g = SpanGrid { m: Vec::with_capacity(n + 1), price: Vec::with_capacity(n + 1), bsiv: Vec::with_capacity(n + 1) };
    for j in 0..=n {
        let m = opts.m_min + j as f64 * opts.dm;
        let p = evaluate_surface(ps, m);
        if !p.otm_price.is_finite() || !(p.total_variance > 0.0) {
            return Err(Error::Surface { m, tau: ps.tau });
        }
        g.m.push(m);
        g.price.push(p.otm_price);
        g.bsiv.push(p.bsiv);
    }
    Ok(g)
}

pub fn span_ccf(ps: &PreparedSurface, u_grid: &[f64], opts: &SpanOptions) -> Result<Vec<Complex64>> {
    let g = summation_grid(ps, opts)?;
    Ok(span_ccf_grid(&g.m, &g.price, u_grid, ps.tau, ps.forward, ps.rate))
}

/// Principal log at the first point, then the branch closest to the previous phase.
pub fn log_ccf_unwrap(u_grid: &[f64], phi: &[Complex64]) -> Result<Vec<Complex64>> {
    let mut out: Vec<Complex64> = Vec::with_capacity(phi.len());
    for (k, p) in phi.iter().enumerate() {
        if p.norm() < 1e-14 {
            return Err(Error::NearZeroModulus(u_grid.get(k).copied().unwrap_or(f64::NAN)));
        }
        let mut l = p.ln();
        if let Some(prev) = out.last() {
            let turns = ((prev.im - l.im) / (2.0 * std::f64::consts::PI)).round();
            l.im += turns * 2.0 * std::f64::consts::PI;
        }
        out.push(l);
    }
    Ok(out)
}

/// One summation node for the covariance sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovNode {
    pub m: f64,
    pub dm: f64,
    pub bsiv: f64,
    pub vega: f64,
}

/// Nodes from a sorted log-moneyness list; the first point only anchors the spacing.
pub fn nodes_from_surface(ps: &PreparedSurface, m: &[f64]) -> Vec<CovNode> {
    m.windows(2)
        .map(|w| {
            let p = evaluate_surface(ps, w[1]);
            CovNode { m: w[1], dm: w[1] - w[0], bsiv: p.bsiv, vega: ps.vega_at(w[1]) }
        })
        .collect()
}

/// sum_j e^{(i w - 2) m_j} kappa_j^2 nu_j^2 dm_j^2 for each requested frequency w >= 0.
fn weighted_sums(nodes: &[CovNode], freqs: &[f64], scale: f64) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); freqs.len()];
    let base = freqs.iter().copied().filter(|&f| f > 0.0).fold(f64::INFINITY, f64::min);
    let integer = base.is_finite()
        && freqs.iter().all(|&f| {
            let k = f / base;
            (k - k.round()).abs() < 1e-9
        });
    if integer {
        let kmax = freqs.iter().map(|&f| (f / base).round() as usize).max().unwrap_or(0);
        let mut pow = vec![Complex64::new(0.0, 0.0); kmax + 1];
        let mut sums = vec![Complex64::new(0.0, 0.0); kmax + 1];
        for nd in nodes {
            let w = (nd.bsiv * nd.vega * nd.dm * scale).powi(2) * (-2.0 * nd.m).exp();
            if w == 0.0 {
                continue;
            }
            let r = Complex64::from_polar(1.0, base * nd.m);
            let mut z = Complex64::new(w, 0.0);
            for p in pow.iter_mut() {
                *p = z;
                z *= r;
            }
            for (s, p) in sums.iter_mut().zip(&pow) {
                *s += p;
            }
        }
        for (o, &f) in out.iter_mut().zip(freqs) {
            *o = if f == 0.0 { sums[0] } else { sums[(f / base).round() as usize] };
        }
    } else {
        for nd in nodes {
            let w = (nd.bsiv * nd.vega * nd.dm * scale).powi(2) * (-2.0 * nd.m).exp();
            for (o, &f) in out.iter_mut().zip(freqs) {
                *o += Complex64::from_polar(w, f * nd.m);
            }
        }
    }
    out
}

/// Real 2q x 2q covariance of the stacked [Re; Im] log-CCF errors (per unit sigma_kappa).
pub fn measurement_covariance(nodes: &[CovNode], u_grid: &[f64], phi: &[Complex64], f: f64, sigma_kappa_scale: f64) -> Result<DMatrix<f64>> {
    let q = u_grid.len();
    for (k, p) in phi.iter().enumerate() {
        if p.norm() < 1e-14 {
            return Err(Error::NearZeroModulus(u_grid[k]));
        }
    }
    let key = |x: f64| (x.abs() * 1e9).round() as i64;
    let mut freqs: Vec<f64> = Vec::new();
    let mut seen = std::collections::BTreeMap::new();
    for &a in u_grid {
        for &b in u_grid {
            for w in [(a - b).abs(), (a + b).abs()] {
                seen.entry(key(w)).or_insert_with(|| {
                    freqs.push(w);
                    freqs.len() - 1
                });
            }
        }
    }
    let sums = weighted_sums(nodes, &freqs, sigma_kappa_scale);
    let s_at = |w: f64| -> Complex64 {
        let v = sums[seen[&key(w)]];
        if w < 0.0 {
            v.conj()
        } else {
            v
        }
    };
    let ut: Vec<Complex64> = u_grid.iter().map(|&u| u_t(u, f)).collect();
    let mut h = DMatrix::zeros(2 * q, 2 * q);
    for k in 0..q {
        for l in 0..q {
            let gamma = ut[k] * ut[l].conj() * s_at(u_grid[k] - u_grid[l]) / (phi[k] * phi[l].conj());
            let c = ut[k] * ut[l] * s_at(u_grid[k] + u_grid[l]) / (phi[k] * phi[l]);
            h[(k, l)] = 0.5 * (gamma + c).re;
            h[(k, q + l)] = 0.5 * (c - gamma).im;
            h[(q + k, l)] = 0.5 * (gamma + c).im;
            h[(q + k, q + l)] = 0.5 * (gamma - c).re;
        }
    }
    Ok(psd_clip(h))
}

/// Stacked per-date observation: [Re log phi(u_1..u_q); Im ...] per tenor, tenors concatenated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CCFMeasurement {
    pub quote_date: NaiveDate,
    pub tenor_days: Vec<i64>,
    pub taus: Vec<f64>,
    pub u_grid: Vec<f64>,
    pub y: Vec<f64>,
    pub h_blocks: Vec<DMatrix<f64>>,
    pub forwards: Vec<f64>,
    pub rates: Vec<f64>,
    /// Observed exogenous state values (empty when the model has none).
    pub exog: Vec<f64>,
}

impl CCFMeasurement {
    pub fn dim(&self) -> usize {
        self.y.len()
    }

    pub fn block_dim(&self) -> usize {
        2 * self.u_grid.len()
    }
}

/// Log-CCF vector and covariance block for one prepared slice.
pub fn measure_slice(ps: &PreparedSurface, u_grid: &[f64], opts: &SpanOptions) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let g = summation_grid(ps, opts)?;
    let phi = span_ccf_grid(&g.m, &g.price, u_grid, ps.tau, ps.forward, ps.rate);
    let logs = log_ccf_unwrap(u_grid, &phi)?;
    let nodes = match opts.covariance_grid {
        CovarianceGrid::Quotes => nodes_from_surface(ps, &ps.observed_m),
        CovarianceGrid::Summation => g
            .m
            .windows(2)
            .enumerate()
            .map(|(j, w)| {
                let k = ps.forward * w[1].exp();
                CovNode { m: w[1], dm: w[1] - w[0], bsiv: g.bsiv[j + 1], vega: crate::blackscholes::vega(ps.forward, k, ps.tau, ps.rate, g.bsiv[j + 1]) }
            })
            .collect(),
    };
    let h = measurement_covariance(&nodes, u_grid, &phi, ps.forward, 1.0)?;
    let mut y: Vec<f64> = logs.iter().map(|l| l.re).collect();
    y.extend(logs.iter().map(|l| l.im));
    Ok((y, h))
}

pub fn build_measurement(surfaces: &[PreparedSurface], u_grid: &[f64], opts: &SpanOptions, exog: &[f64]) -> Result<CCFMeasurement> {
    let first = surfaces.first().ok_or_else(|| Error::Empty("no prepared tenors for date".into()))?;
    let mut m = CCFMeasurement {
        quote_date: first.quote_date,
        tenor_days: Vec::new(),
        taus: Vec::new(),
        u_grid: u_grid.to_vec(),
        y: Vec::new(),
        h_blocks: Vec::new(),
        forwards: Vec::new(),
        rates: Vec::new(),
        exog: exog.to_vec(),
    };
    for ps in surfaces {
        let (y, h) = measure_slice(ps, u_grid, opts).map_err(|e| Error::Invalid(format!("tenor {} days: {e}", ps.tenor_days)))?;
        m.tenor_days.push(ps.tenor_days);
        m.taus.push(ps.tau);
        m.y.extend(y);
        m.h_blocks.push(h);
        m.forwards.push(ps.forward);
        m.rates.push(ps.rate);
    }
    Ok(m)
}

/// OTM Black prices on a grid at fixed total variance function (used by tests and tools).
pub fn otm_prices_from_variance(f: f64, tau: f64, r: f64, m: &[f64], w: impl Fn(f64) -> f64) -> Vec<f64> {
    m.iter()
        .map(|&x| bs_price(f, f * x.exp(), tau, r, (w(x) / tau).sqrt(), x > 0.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_argument_is_discount() {
        let m: Vec<f64> = (0..100).map(|i| -1.0 + 0.02 * i as f64).collect();
        let p = vec![1.0; 100];
        let phi = span_ccf_grid(&m, &p, &[0.0], 0.1, 100.0, 0.03);
        assert_eq!(phi[0], Complex64::new((-0.003f64).exp(), 0.0));
    }

    #[test]
    fn constant_phi_unwraps_to_discount() {
        let phi = vec![Complex64::new((-0.002f64).exp(), 0.0); 5];
        let u = [1.0, 2.0, 3.0, 4.0, 5.0];
        for l in log_ccf_unwrap(&u, &phi).unwrap() {
            assert!((l - Complex64::new(-0.002, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn phase_crossing_pi_is_continuous() {
        // phase grows 0.9 rad per unit of u and crosses pi several times
        let u: Vec<f64> = (0..12).map(f64::from).collect();
        let phi: Vec<Complex64> = u.iter().map(|&x| Complex64::from_polar((-0.01 * x).exp(), 0.9 * x)).collect();
        let l = log_ccf_unwrap(&u, &phi).unwrap();
        for (x, v) in u.iter().zip(&l) {
            assert!((v.im - 0.9 * x).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_modulus_rejected() {
        let r = log_ccf_unwrap(&[1.0], &[Complex64::new(1e-16, 0.0)]);
        assert!(matches!(r, Err(Error::NearZeroModulus(_))));
    }

    #[test]
    fn zero_scale_gives_zero_block() {
        let nodes = vec![CovNode { m: -0.1, dm: 0.01, bsiv: 0.2, vega: 10.0 }, CovNode { m: 0.05, dm: 0.01, bsiv: 0.2, vega: 10.0 }];
        let phi = vec![Complex64::new(0.9, 0.1), Complex64::new(0.8, 0.2)];
        let h = measurement_covariance(&nodes, &[1.0, 2.0], &phi, 100.0, 0.0).unwrap();
        assert!(h.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_argument_block_by_hand() {
        let nodes = vec![
            CovNode { m: -0.2, dm: 0.01, bsiv: 0.25, vega: 8.0 },
            CovNode { m: 0.0, dm: 0.01, bsiv: 0.2, vega: 12.0 },
            CovNode { m: 0.1, dm: 0.02, bsiv: 0.18, vega: 9.0 },
        ];
        let (u, f) = (3.0, 100.0);
        let phi = Complex64::new(0.7, -0.3);
        let h = measurement_covariance(&nodes, &[u], &[phi], f, 1.0).unwrap();
        let ut = Complex64::new(u * u, u) / f;
        let mut s0 = Complex64::new(0.0, 0.0);
        let mut s2 = Complex64::new(0.0, 0.0);
        for n in &nodes {
            let w = (n.bsiv * n.vega * n.dm).powi(2);
            s0 += Complex64::new(-2.0 * n.m, 0.0).exp() * w;
            s2 += Complex64::new(-2.0 * n.m, 2.0 * u * n.m).exp() * w;
        }
        let g = ut * ut.conj() * s0 / (phi * phi.conj());
        let c = ut * ut * s2 / (phi * phi);
        let expect = [[0.5 * (g + c).re, 0.5 * (c - g).im], [0.5 * (g + c).im, 0.5 * (g - c).re]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((h[(i, j)] - expect[i][j]).abs() < 1e-15 * expect[0][0].abs().max(1e-300) + 1e-30);
            }
        }
    }
}
