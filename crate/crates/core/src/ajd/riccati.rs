//! Dormand-Prince 5(4) integration of the complex Riccati system for alpha(u, tau), beta(u, tau).

use super::AffineModel;
use crate::error::{Error, Result};
use num_complex::Complex64;
use rayon::prelude::*;

const MAXN: usize = 4;
type State = [Complex64; MAXN];

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiccatiOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Fixed number of steps per tenor interval instead of adaptive control.
    pub fixed_steps: Option<usize>,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        RiccatiOptions { rtol: 1e-10, atol: 1e-10, max_steps: 1_000_000, fixed_steps: None }
    }
}

impl RiccatiOptions {
    pub fn fixed(n: usize) -> Self {
        RiccatiOptions { fixed_steps: Some(n), ..Default::default() }
    }
}

#[derive(Debug, Clone)]
pub struct CCFCoefficients {
    pub u_grid: Vec<f64>,
    pub tau_grid: Vec<f64>,
    pub dim: usize,
    /// Row-major q x k.
    pub alpha: Vec<Complex64>,
    /// Row-major q x k x d.
    pub beta: Vec<Complex64>,
    pub beta_tilde: Vec<Complex64>,
}

impl CCFCoefficients {
    pub fn alpha(&self, iu: usize, it: usize) -> Complex64 {
        self.alpha[iu * self.tau_grid.len() + it]
    }

    pub fn beta(&self, iu: usize, it: usize) -> &[Complex64] {
        let o = (iu * self.tau_grid.len() + it) * self.dim;
        &self.beta[o..o + self.dim]
    }

    pub fn beta_tilde(&self, iu: usize, it: usize) -> &[Complex64] {
        let o = (iu * self.tau_grid.len() + it) * self.dim;
        &self.beta_tilde[o..o + self.dim]
    }

    pub fn locate(&self, u: f64, tau: f64) -> Result<(usize, usize)> {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + b.abs());
        let iu = self.u_grid.iter().position(|&x| close(x, u));
        let it = self.tau_grid.iter().position(|&x| close(x, tau));
        match (iu, it) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::OffGrid { u, tau }),
        }
    }

    /// log of the return CCF at a state: alpha + beta_tilde . x
    pub fn log_ccf(&self, iu: usize, it: usize, state: &[f64]) -> Complex64 {
        let bt = self.beta_tilde(iu, it);
        let mut acc = self.alpha(iu, it);
        for (b, x) in bt.iter().zip(state) {
            acc += b * x;
        }
        acc
    }
}

/// exp(alpha + beta_tilde . X) at a grid point.
pub fn model_ccf(coeffs: &CCFCoefficients, _model: &AffineModel, state: &[f64], u: f64, tau: f64) -> Result<Complex64> {
    let (iu, it) = coeffs.locate(u, tau)?;
    Ok(coeffs.log_ccf(iu, it, state).exp())
}

pub fn riccati_solve(model: &AffineModel, u_grid: &[f64], tau_grid: &[f64]) -> Result<CCFCoefficients> {
    riccati_solve_with(model, u_grid, tau_grid, &RiccatiOptions::default())
}

pub fn riccati_solve_with(model: &AffineModel, u_grid: &[f64], tau_grid: &[f64], opts: &RiccatiOptions) -> Result<CCFCoefficients> {
    let n = model.dim_state;
    assert!(n <= MAXN, "state dimension above {MAXN}");
    if tau_grid.iter().any(|&t| !(t > 0.0)) || tau_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Invalid("tau grid must be strictly positive and ascending".into()));
    }
    let rows: Vec<Vec<(Complex64, Vec<Complex64>)>> = u_grid
        .par_iter()
        .map(|&u| {
            let mut b0 = vec![Complex64::new(0.0, 0.0); n];
            b0[0] = Complex64::new(0.0, u);
            solve_from(model, &b0, tau_grid, opts).map_err(|e| relabel(e, u))
        })
        .collect::<Result<_>>()?;
    let k = tau_grid.len();
    let mut alpha = Vec::with_capacity(u_grid.len() * k);
    let mut beta = Vec::with_capacity(u_grid.len() * k * n);
    let mut beta_tilde = Vec::with_capacity(u_grid.len() * k * n);
    for (row, &u) in rows.iter().zip(u_grid) {
        for (a, b) in row {
            alpha.push(*a);
            beta.extend_from_slice(b);
            let mut bt = b.clone();
            bt[0] -= Complex64::new(0.0, u);
            beta_tilde.extend_from_slice(&bt);
        }
    }
    Ok(CCFCoefficients { u_grid: u_grid.to_vec(), tau_grid: tau_grid.to_vec(), dim: n, alpha, beta, beta_tilde })
}

fn relabel(e: Error, u: f64) -> Error {
    match e {
        Error::RiccatiStepUnderflow { tau, .. } => Error::RiccatiStepUnderflow { u, tau },
        Error::JumpPole { tau, .. } => Error::JumpPole { u, tau },
        other => other,
    }
}

fn eval(model: &AffineModel, y: &State, n: usize, out: &mut State, t: f64) -> Result<()> {
    let mut da = Complex64::new(0.0, 0.0);
    let mut db = [Complex64::new(0.0, 0.0); MAXN];
    model
        .rhs(&y[1..=n], &mut da, &mut db[..n])
        .ok_or(Error::JumpPole { u: f64::NAN, tau: t })?;
    out[0] = da;
    out[1..=n].copy_from_slice(&db[..n]);
    Ok(())
}

#[inline]
fn comb(y: &State, n: usize, h: f64, ks: &[(&State, f64)]) -> State {
    let mut out = *y;
    for i in 0..=n {
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, c) in ks {
            if *c != 0.0 {
                acc += k[i] * *c;
            }
        }
        out[i] += acc * h;
    }
    out
}

/// Integrates from beta(0) = beta0, alpha(0) = 0 and returns (alpha, beta) at each tenor.
pub fn solve_from(model: &AffineModel, beta0: &[Complex64], taus: &[f64], opts: &RiccatiOptions) -> Result<Vec<(Complex64, Vec<Complex64>)>> {
    let n = model.dim_state;
    let mut y: State = [Complex64::new(0.0, 0.0); MAXN];
    y[1..=n].copy_from_slice(beta0);
    let mut t = 0.0;
    let mut k1 = [Complex64::new(0.0, 0.0); MAXN];
    eval(model, &y, n, &mut k1, t)?;
    let mut out = Vec::with_capacity(taus.len());
    let mut h = initial_step(&y, &k1, n, opts, taus[0]);
    let mut steps = 0usize;
    for &target in taus {
        if let Some(m) = opts.fixed_steps {
            let hf = (target - t) / m as f64;
            for _ in 0..m {
                let (ynew, _, k7) = dp_step(model, &y, &k1, n, t, hf)?;
                y = ynew;
                k1 = k7;
                t += hf;
            }
            t = target;
        } else {
            while t < target {
                steps += 1;
                if steps > opts.max_steps {
                    return Err(Error::RiccatiStepUnderflow { u: f64::NAN, tau: target });
                }
                let last = t + h >= target;
                let hs = if last { target - t } else { h };
                if hs <= 1e-14 * t.max(1e-3) {
                    return Err(Error::RiccatiStepUnderflow { u: f64::NAN, tau: target });
                }
                let (ynew, err, k7) = dp_step(model, &y, &k1, n, t, hs)?;
                let mut norm: f64 = 0.0;
                for i in 0..=n {
                    let sc = opts.atol + opts.rtol * y[i].norm().max(ynew[i].norm());
                    norm = f64::max(norm, err[i].norm() / sc);
                }
                if !norm.is_finite() {
                    h = hs * 0.2;
                    continue;
                }
                if norm <= 1.0 {
                    y = ynew;
                    k1 = k7;
                    t = if last { target } else { t + hs };
                    let fac = if norm == 0.0 { 5.0 } else { (0.9 * norm.powf(-0.2)).clamp(0.2, 5.0) };
                    if !last || fac < 1.0 {
                        h = hs * fac;
                    }
                } else {
                    h = hs * (0.9 * norm.powf(-0.2)).clamp(0.2, 1.0);
                }
            }
        }
        out.push((y[0], y[1..=n].to_vec()));
    }
    Ok(out)
}

fn initial_step(y: &State, f: &State, n: usize, opts: &RiccatiOptions, tau: f64) -> f64 {
    let mut d0: f64 = 0.0;
    let mut d1: f64 = 0.0;
    for i in 0..=n {
        let sc = opts.atol + opts.rtol * y[i].norm();
        d0 += (y[i].norm() / sc).powi(2);
        d1 += (f[i].norm() / sc).powi(2);
    }
    let (d0, d1) = (d0.sqrt(), d1.sqrt());
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h.min(tau).max(1e-10)
}

fn dp_step(model: &AffineModel, y: &State, k1: &State, n: usize, t: f64, h: f64) -> Result<(State, State, State)> {
    let mut k2 = [Complex64::new(0.0, 0.0); MAXN];
    let mut k3 = k2;
    let mut k4 = k2;
    let mut k5 = k2;
    let mut k6 = k2;
    let mut k7 = k2;
    eval(model, &comb(y, n, h, &[(k1, A21)]), n, &mut k2, t + C2 * h)?;
    eval(model, &comb(y, n, h, &[(k1, A31), (&k2, A32)]), n, &mut k3, t + C3 * h)?;
    eval(model, &comb(y, n, h, &[(k1, A41), (&k2, A42), (&k3, A43)]), n, &mut k4, t + C4 * h)?;
    eval(model, &comb(y, n, h, &[(k1, A51), (&k2, A52), (&k3, A53), (&k4, A54)]), n, &mut k5, t + C5 * h)?;
    eval(model, &comb(y, n, h, &[(k1, A61), (&k2, A62), (&k3, A63), (&k4, A64), (&k5, A65)]), n, &mut k6, t + h)?;
    let ynew = comb(y, n, h, &[(k1, B1), (&k3, B3), (&k4, B4), (&k5, B5), (&k6, B6)]);
    eval(model, &ynew, n, &mut k7, t + h)?;
    let mut err = [Complex64::new(0.0, 0.0); MAXN];
    for i in 0..=n {
        err[i] = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * h;
    }
    Ok((ynew, err, k7))
}
