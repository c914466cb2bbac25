//! Exact affine conditional moments of the latent state over one transition step.

use super::params::{physical_model, ParameterVector};
use super::riccati::{solve_from, RiccatiOptions};
use super::AffineModel;
use crate::error::Result;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMomentCoeffs {
    pub c: DVector<f64>,
    pub t: DMatrix<f64>,
    pub q0: DMatrix<f64>,
    pub q1: Vec<DMatrix<f64>>,
    pub dt: f64,
}

impl ConditionalMomentCoeffs {
    pub fn mean(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c + &self.t * x
    }

    pub fn variance(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut q = self.q0.clone();
        for (j, q1) in self.q1.iter().enumerate() {
            q += q1 * x[j];
        }
        q
    }
}

/// Physical-measure transition coefficients. `state` carries the observed coordinates
/// (log forward, exogenous factors); latent entries are ignored.
pub fn transition_coeffs(params: &ParameterVector, dt: f64, state: &[f64]) -> Result<ConditionalMomentCoeffs> {
    let model = physical_model(params);
    if model.dim_latent() == 1 {
        Ok(transition_closed_form(&model, dt, state))
    } else {
        transition_fd(&model, dt, state)
    }
}

/// expm1(x)/x with its limit at 0.
fn phi1(x: f64) -> f64 {
    if x.abs() < 1e-10 {
        1.0 + 0.5 * x
    } else {
        x.exp_m1() / x
    }
}

/// Univariate closed form: mean c + T x, variance Q0 + Q1 x.
pub fn transition_closed_form(model: &AffineModel, dt: f64, state: &[f64]) -> ConditionalMomentCoeffs {
    let l = model.latent[0];
    let obs = model.observed();
    let mut k0 = model.k0[l];
    let k1 = model.k1[(l, l)];
    let mut h0 = model.h0[(l, l)];
    let h1 = model.h1[l][(l, l)];
    for &o in &obs {
        k0 += model.k1[(l, o)] * state[o];
        h0 += model.h1[o][(l, l)] * state[o];
    }
    let (mut g0, mut g1, mut a, mut b) = (k0, k1, h0, h1);
    for jc in &model.jumps {
        let mut lam0 = jc.l0;
        for &o in &obs {
            lam0 += jc.l1[o] * state[o];
        }
        let lam1 = jc.l1[l];
        let mj = jc.transform.mean()[l];
        let mj2 = jc.transform.second_moment()[(l, l)];
        g0 += lam0 * mj;
        g1 += lam1 * mj;
        a += lam0 * mj2;
        b += lam1 * mj2;
    }
    let tt = (g1 * dt).exp();
    let e1 = dt * phi1(g1 * dt);
    let e2 = dt * phi1(2.0 * g1 * dt);
    let q0 = (a * e2 + b * g0 * e1 * e1 / 2.0).max(0.0);
    let q1 = b * tt * e1;
    ConditionalMomentCoeffs {
        c: DVector::from_element(1, g0 * e1),
        t: DMatrix::from_element(1, 1, tt),
        q0: DMatrix::from_element(1, 1, q0),
        q1: vec![DMatrix::from_element(1, 1, q1)],
        dt,
    }
}

const FD_STEP: f64 = 1e-5;
const FD_RK_STEPS: usize = 64;

/// Central differences of the physical log-CCF of the latent block at the origin.
/// Integration uses a fixed step count so the difference quotients are smooth in the argument.
pub fn transition_fd(model: &AffineModel, dt: f64, state: &[f64]) -> Result<ConditionalMomentCoeffs> {
    let mut m = model.clone();
    m.rate = 0.0;
    let lat = m.latent.clone();
    let obs = m.observed();
    let d = lat.len();
    let n = m.dim_state;
    let opts = RiccatiOptions::fixed(FD_RK_STEPS);
    let h = FD_STEP;
    // K(arg) split into (alpha, beta) so it is linear in the state
    let kfun = |arg: &[f64]| -> Result<(Complex64, Vec<Complex64>)> {
        let mut b0 = vec![Complex64::new(0.0, 0.0); n];
        for (k, &i) in lat.iter().enumerate() {
            b0[i] = Complex64::new(0.0, arg[k]);
        }
        Ok(solve_from(&m, &b0, &[dt], &opts)?.remove(0))
    };
    let unit = |j: usize, s: f64| {
        let mut v = vec![0.0; d];
        v[j] += s;
        v
    };
    let mut c = DVector::zeros(d);
    let mut t = DMatrix::zeros(d, d);
    for j in 0..d {
        let (ap, bp) = kfun(&unit(j, h))?;
        let (am, bm) = kfun(&unit(j, -h))?;
        let mut cj = (ap - am).im / (2.0 * h);
        for &o in &obs {
            cj += (bp[o] - bm[o]).im / (2.0 * h) * state[o];
        }
        c[j] = cj;
        for (k, &i) in lat.iter().enumerate() {
            t[(j, k)] = (bp[i] - bm[i]).im / (2.0 * h);
        }
    }
    let mut q0 = DMatrix::zeros(d, d);
    let mut q1 = vec![DMatrix::zeros(d, d); d];
    for j in 0..d {
        for k in j..d {
            let mut pp = unit(j, h);
            pp[k] += h;
            let mut pm = unit(j, h);
            pm[k] -= h;
            let mm: Vec<f64> = pp.iter().map(|x| -x).collect();
            let mp: Vec<f64> = pm.iter().map(|x| -x).collect();
            let (a1, b1) = kfun(&pp)?;
            let (a2, b2) = kfun(&pm)?;
            let (a3, b3) = kfun(&mp)?;
            let (a4, b4) = kfun(&mm)?;
            let scale = -1.0 / (4.0 * h * h);
            let mut v0 = (a1 - a2 - a3 + a4).re * scale;
            for &o in &obs {
                v0 += (b1[o] - b2[o] - b3[o] + b4[o]).re * scale * state[o];
            }
            q0[(j, k)] = v0;
            q0[(k, j)] = v0;
            for (l, &i) in lat.iter().enumerate() {
                let v = (b1[i] - b2[i] - b3[i] + b4[i]).re * scale;
                q1[l][(j, k)] = v;
                q1[l][(k, j)] = v;
            }
        }
    }
    Ok(ConditionalMomentCoeffs { c, t, q0: psd_clip(q0), q1, dt })
}

/// Symmetrize and clip negative eigenvalues at zero.
pub fn psd_clip(m: DMatrix<f64>) -> DMatrix<f64> {
    let s = (&m + m.transpose()) * 0.5;
    if s.nrows() == 1 {
        return s.map(|x| x.max(0.0));
    }
    let eig = SymmetricEigen::new(s.clone());
    if eig.eigenvalues.iter().all(|&x| x >= 0.0) {
        return s;
    }
    let lam = DMatrix::from_diagonal(&eig.eigenvalues.map(|x| x.max(0.0)));
    let r = &eig.eigenvectors * lam * eig.eigenvectors.transpose();
    (&r + r.transpose()) * 0.5
}
